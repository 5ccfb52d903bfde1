"""Server-authoritative balances over an append-only payment ledger.

Amounts are integer minor units (paise); balances can never go negative.
The card's own stored value is only ever a cache that `reconcile` checks
against the server's number, which always wins.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from enum import Enum

from .model import CardRecord, CardRegistry, CardUid, Role, verify_pin


@dataclass
class Account:
    uid: CardUid
    balance_minor: int
    updated_at: datetime


@dataclass(frozen=True, slots=True)
class LedgerEntry:
    seq: int
    uid: CardUid
    delta_minor: int  # negative = charge, positive = topup
    kind: str  # charge | topup | adjustment
    device_id: str
    ts: datetime


class PayStatus(Enum):
    OK = "ok"
    INSUFFICIENT_FUNDS = "insufficient_funds"
    BAD_PIN = "bad_pin"
    UNKNOWN_CARD = "unknown_card"
    FORBIDDEN = "forbidden"


@dataclass(frozen=True, slots=True)
class PayResult:
    status: PayStatus
    balance_minor: int | None = None

    @property
    def ok(self) -> bool:
        return self.status is PayStatus.OK


@dataclass(frozen=True, slots=True)
class ReconcileResult:
    authoritative_minor: int
    mismatch: bool


class PaymentLedger:
    """Accounts plus their gapless, immutable entry log."""

    def __init__(self) -> None:
        self.accounts: dict[CardUid, Account] = {}
        self.entries: list[LedgerEntry] = []

    def ensure_account(self, uid: CardUid, now: datetime) -> Account:
        acct = self.accounts.get(uid)
        if acct is None:
            acct = Account(uid=uid, balance_minor=0, updated_at=now)
            self.accounts[uid] = acct
        return acct

    def evaluate_charge(self, uid: CardUid, pin: str, amount_minor: int,
                        registry: CardRegistry) -> PayResult:
        """Decide a charge without applying it; OK means it would succeed.

        The returned balance is what the account would hold afterwards.
        """
        if amount_minor <= 0:
            raise ValueError("amount_minor must be positive")
        rec = registry.active(uid)
        if rec is None or uid not in self.accounts:
            return PayResult(PayStatus.UNKNOWN_CARD)
        if not verify_pin(rec, pin):
            return PayResult(PayStatus.BAD_PIN)
        acct = self.accounts[uid]
        if acct.balance_minor < amount_minor:
            return PayResult(PayStatus.INSUFFICIENT_FUNDS, acct.balance_minor)
        return PayResult(PayStatus.OK, acct.balance_minor - amount_minor)

    def charge(self, uid: CardUid, pin: str, amount_minor: int,
               device_id: str, now: datetime,
               registry: CardRegistry) -> PayResult:
        """Debit an account after PIN check. Failures change nothing."""
        result = self.evaluate_charge(uid, pin, amount_minor, registry)
        if result.ok:
            self._append(uid, -amount_minor, "charge", device_id, now)
        return result

    def evaluate_topup(self, uid: CardUid, amount_minor: int,
                       vendor_card: CardRecord) -> PayResult:
        """Decide a top-up without applying it."""
        if amount_minor <= 0:
            raise ValueError("amount_minor must be positive")
        if (not vendor_card.is_active
                or vendor_card.role not in (Role.VENDOR, Role.ADMIN)):
            return PayResult(PayStatus.FORBIDDEN)
        if uid not in self.accounts:
            return PayResult(PayStatus.UNKNOWN_CARD)
        return PayResult(PayStatus.OK,
                         self.accounts[uid].balance_minor + amount_minor)

    def topup(self, uid: CardUid, amount_minor: int, vendor_card: CardRecord,
              device_id: str, now: datetime) -> PayResult:
        """Credit an account; only a vendor or admin card authorizes it."""
        result = self.evaluate_topup(uid, amount_minor, vendor_card)
        if result.ok:
            self._append(uid, amount_minor, "topup", device_id, now)
        return result

    def balance_inquiry(self, uid: CardUid, pin: str,
                        registry: CardRegistry) -> PayResult:
        rec = registry.active(uid)
        if rec is None or uid not in self.accounts:
            return PayResult(PayStatus.UNKNOWN_CARD)
        if not verify_pin(rec, pin):
            return PayResult(PayStatus.BAD_PIN)
        return PayResult(PayStatus.OK, self.accounts[uid].balance_minor)

    @staticmethod
    def reconcile(card_cached_balance_minor: int | None,
                  account: Account) -> ReconcileResult:
        """The server value always wins; a differing cache is flagged."""
        mismatch = (card_cached_balance_minor is not None
                    and card_cached_balance_minor != account.balance_minor)
        return ReconcileResult(account.balance_minor, mismatch)

    def apply_entry(self, kind: str, uid: CardUid, amount_minor: int,
                    device_id: str, ts: datetime) -> None:
        """Replay path: re-apply a previously validated ledger event."""
        if kind == "charge":
            self._append(uid, -amount_minor, "charge", device_id, ts)
        elif kind in ("topup", "adjustment"):
            self._append(uid, amount_minor, kind, device_id, ts)
        else:
            raise ValueError(f"not a ledger event kind: {kind!r}")

    def _append(self, uid: CardUid, delta_minor: int, kind: str,
                device_id: str, ts: datetime) -> LedgerEntry:
        acct = self.ensure_account(uid, ts)
        balance = acct.balance_minor + delta_minor
        if balance < 0:
            raise ValueError("ledger entry would drive balance negative")
        entry = LedgerEntry(seq=len(self.entries) + 1, uid=uid,
                            delta_minor=delta_minor, kind=kind,
                            device_id=device_id, ts=ts)
        self.entries.append(entry)
        acct.balance_minor = balance
        acct.updated_at = ts
        return entry

    def entries_for(self, uid: CardUid) -> list[LedgerEntry]:
        return [e for e in self.entries if e.uid == uid]
