import { ConsoleStore, DoorPanel } from "./store.js";

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

function doorCard(panel: DoorPanel): string {
  const door = escapeHtml(panel.doorId);
  const link = panel.connected ? "online" : "offline";
  return [
    `<article class="door" data-door="${door}" data-mode="${panel.mode}">`,
    `<h3>${door}</h3>`,
    `<p class="mode">${panel.mode}</p>`,
    `<p class="link">${link} · ${escapeHtml(panel.lastKind)} @ ${escapeHtml(panel.lastTs)}</p>`,
    `<button data-door="${door}" data-command="shutdown">shutdown</button>`,
    `<button data-door="${door}" data-command="clear">clear</button>`,
    `</article>`,
  ].join("\n");
}

function doorsSection(store: ConsoleStore): string {
  const panels = [...store.doors.values()]
    .sort((a, b) => a.doorId.localeCompare(b.doorId))
    .map(doorCard)
    .join("\n");
  return `<section id="doors"><h2>Doors</h2>${panels || "<p>none yet</p>"}</section>`;
}

function cardsSection(store: ConsoleStore): string {
  const rows = [...store.cards.values()]
    .sort((a, b) => a.uid.localeCompare(b.uid))
    .map((card) => {
      const balance = store.balances.get(card.uid) ?? 0;
      return (
        `<tr data-uid="${card.uid}" data-status="${card.status}">` +
        `<td>${card.uid}</td><td>${escapeHtml(card.holderName)}</td>` +
        `<td>${card.role}</td><td>${card.status}</td>` +
        `<td class="balance">${(balance / 100).toFixed(2)}</td></tr>`
      );
    })
    .join("\n");
  return (
    `<section id="cards"><h2>Cards</h2><table>` +
    `<thead><tr><th>uid</th><th>holder</th><th>role</th><th>status</th>` +
    `<th>balance</th></tr></thead><tbody>${rows}</tbody></table></section>`
  );
}

function sessionsSection(store: ConsoleStore): string {
  const rows = [...store.sessions.values()]
    .sort((a, b) => a.sessionId.localeCompare(b.sessionId))
    .map(
      (s) =>
        `<tr data-session="${escapeHtml(s.sessionId)}">` +
        `<td>${escapeHtml(s.sessionId)}</td><td>${escapeHtml(s.course)}</td>` +
        `<td>${s.open ? "open" : "closed"}</td>` +
        `<td class="accepted">${s.accepted.size}</td></tr>`,
    )
    .join("\n");
  return (
    `<section id="sessions"><h2>Attendance</h2><table>` +
    `<thead><tr><th>session</th><th>course</th><th>state</th>` +
    `<th>present</th></tr></thead><tbody>${rows}</tbody></table></section>`
  );
}

function tailSection(store: ConsoleStore): string {
  const lines = [...store.tail]
    .reverse()
    .map(
      (rec) =>
        `<li data-seq="${rec.seq}"><code>${rec.seq}</code> ` +
        `${escapeHtml(rec.ts)} <b>${escapeHtml(rec.kind)}</b> ` +
        `${escapeHtml(rec.source)}</li>`,
    )
    .join("\n");
  return `<section id="log"><h2>Recent events</h2><ol reversed>${lines}</ol></section>`;
}

/** Whole console as one HTML fragment; the caller swaps it into the page. */
export function renderConsole(store: ConsoleStore): string {
  return [
    `<header><h1>campus-pass ops</h1>` +
      `<p class="position">journal position ${store.lastSeq}</p></header>`,
    doorsSection(store),
    cardsSection(store),
    sessionsSection(store),
    tailSection(store),
  ].join("\n");
}
