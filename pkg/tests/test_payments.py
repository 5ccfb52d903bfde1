"""Payment ledger: integer minor units, PIN-checked charges, vendor-only
top-ups, conservation over random workloads, and failure atomicity."""

from __future__ import annotations

import random
from datetime import timedelta

import pytest

from campus_pass.model import (
    CardRegistry,
    Role,
    make_card,
    rfc3339,
    utc,
)
from campus_pass.payments import PaymentLedger, PayStatus

T0 = utc(2024, 1, 1, 8, 0, 0)


def fingerprint(ledger: PaymentLedger) -> tuple:
    """Full observable state, for bit-identical comparisons."""
    accounts = tuple(sorted(
        (uid, a.balance_minor, rfc3339(a.updated_at))
        for uid, a in ledger.accounts.items()))
    return accounts, tuple(ledger.entries)


def small_world():
    reg = CardRegistry()
    reg.register(make_card("9ABC1234", "Shravan", "1234", Role.STUDENT, T0))
    reg.register(make_card("DEADBEEF", "Vendor", "9999", Role.VENDOR, T0))
    ledger = PaymentLedger()
    ledger.ensure_account("9ABC1234", T0)
    return reg, ledger


def vendor(reg: CardRegistry):
    return reg.get("DEADBEEF")


def test_topup_then_charge_happy_path():
    reg, ledger = small_world()
    up = ledger.topup("9ABC1234", 5000, vendor(reg), "pos-1", T0)
    assert up.status is PayStatus.OK and up.balance_minor == 5000
    down = ledger.charge("9ABC1234", "1234", 1500, "pos-1",
                         T0 + timedelta(seconds=5), reg)
    assert down.status is PayStatus.OK and down.balance_minor == 3500
    assert ledger.accounts["9ABC1234"].balance_minor == 3500
    assert [e.delta_minor for e in ledger.entries] == [5000, -1500]


def test_charge_refusals():
    reg, ledger = small_world()
    ledger.topup("9ABC1234", 100, vendor(reg), "pos-1", T0)
    assert ledger.charge("9ABC1234", "0000", 50, "pos-1", T0, reg).status \
        is PayStatus.BAD_PIN
    assert ledger.charge("9ABC1234", "1234", 500, "pos-1", T0, reg).status \
        is PayStatus.INSUFFICIENT_FUNDS
    assert ledger.charge("00000000", "1234", 50, "pos-1", T0, reg).status \
        is PayStatus.UNKNOWN_CARD
    reg.revoke("9ABC1234")
    assert ledger.charge("9ABC1234", "1234", 50, "pos-1", T0, reg).status \
        is PayStatus.UNKNOWN_CARD
    assert ledger.accounts["9ABC1234"].balance_minor == 100


def test_insufficient_funds_reports_current_balance():
    reg, ledger = small_world()
    ledger.topup("9ABC1234", 100, vendor(reg), "pos-1", T0)
    result = ledger.charge("9ABC1234", "1234", 101, "pos-1", T0, reg)
    assert result.status is PayStatus.INSUFFICIENT_FUNDS
    assert result.balance_minor == 100


def test_topup_requires_vendor_or_admin():
    reg, ledger = small_world()
    student = reg.get("9ABC1234")
    assert ledger.topup("9ABC1234", 100, student, "pos-1", T0).status \
        is PayStatus.FORBIDDEN
    admin = make_card("AD000001", "Admin", "0007", Role.ADMIN, T0)
    assert ledger.topup("9ABC1234", 100, admin, "pos-1", T0).status \
        is PayStatus.OK
    revoked_vendor = vendor(reg).revoked()
    assert ledger.topup("9ABC1234", 100, revoked_vendor, "pos-1", T0).status \
        is PayStatus.FORBIDDEN


def test_topup_unknown_account():
    reg, ledger = small_world()
    assert ledger.topup("11112222", 100, vendor(reg), "pos-1", T0).status \
        is PayStatus.UNKNOWN_CARD


def test_amounts_must_be_positive():
    reg, ledger = small_world()
    with pytest.raises(ValueError):
        ledger.charge("9ABC1234", "1234", 0, "pos-1", T0, reg)
    with pytest.raises(ValueError):
        ledger.topup("9ABC1234", -5, vendor(reg), "pos-1", T0)


def test_balance_inquiry_checks_pin_and_changes_nothing():
    reg, ledger = small_world()
    ledger.topup("9ABC1234", 250, vendor(reg), "pos-1", T0)
    before = fingerprint(ledger)
    ok = ledger.balance_inquiry("9ABC1234", "1234", reg)
    assert ok.status is PayStatus.OK and ok.balance_minor == 250
    assert ledger.balance_inquiry("9ABC1234", "9999", reg).status \
        is PayStatus.BAD_PIN
    assert fingerprint(ledger) == before


def test_reconcile_flags_stale_cache():
    reg, ledger = small_world()
    ledger.topup("9ABC1234", 300, vendor(reg), "pos-1", T0)
    acct = ledger.accounts["9ABC1234"]
    fresh = PaymentLedger.reconcile(300, acct)
    assert not fresh.mismatch and fresh.authoritative_minor == 300
    stale = PaymentLedger.reconcile(250, acct)
    assert stale.mismatch and stale.authoritative_minor == 300
    assert not PaymentLedger.reconcile(None, acct).mismatch


def test_evaluate_charge_does_not_mutate():
    reg, ledger = small_world()
    ledger.topup("9ABC1234", 100, vendor(reg), "pos-1", T0)
    before = fingerprint(ledger)
    result = ledger.evaluate_charge("9ABC1234", "1234", 40, reg)
    assert result.status is PayStatus.OK and result.balance_minor == 60
    assert fingerprint(ledger) == before


def test_apply_entry_replays_ledger_events():
    _, ledger = small_world()
    ledger.apply_entry("topup", "9ABC1234", 500, "pos-1", T0)
    ledger.apply_entry("charge", "9ABC1234", 200, "pos-1", T0)
    assert ledger.accounts["9ABC1234"].balance_minor == 300
    with pytest.raises(ValueError):
        ledger.apply_entry("lottery", "9ABC1234", 1, "pos-1", T0)


# Conservation over a random workload ---------------------------------------

def test_ten_thousand_ops_conserve_and_stay_non_negative():
    rng = random.Random(99)
    reg = CardRegistry()
    ledger = PaymentLedger()
    uids = []
    for i in range(100):
        uid = f"{i:08X}"
        uids.append(uid)
        reg.register(make_card(uid, f"H{i}", "1234", Role.STUDENT, T0))
        ledger.ensure_account(uid, T0)
    vend = make_card("FEEDF00D", "Vendor", "9999", Role.VENDOR, T0)

    deltas: dict[str, int] = {u: 0 for u in uids}
    ok_ops = 0
    for i in range(10_000):
        uid = rng.choice(uids)
        now = T0 + timedelta(seconds=i)
        before = fingerprint(ledger)
        if rng.random() < 0.45:
            amount = rng.randrange(1, 2000)
            result = ledger.topup(uid, amount, vend, "pos-1", now)
            if result.ok:
                deltas[uid] += amount
        else:
            amount = rng.randrange(1, 3000)
            pin = "1234" if rng.random() < 0.9 else "0000"
            result = ledger.charge(uid, pin, amount, "pos-1", now, reg)
            if result.ok:
                deltas[uid] -= amount
        if result.ok:
            ok_ops += 1
        else:
            # Failed ops leave every account and entry untouched.
            assert fingerprint(ledger) == before

    for uid in uids:
        acct = ledger.accounts[uid]
        assert acct.balance_minor == deltas[uid]
        assert acct.balance_minor >= 0
        assert acct.balance_minor == sum(
            e.delta_minor for e in ledger.entries_for(uid))
    # One gapless entry per successful op.
    assert [e.seq for e in ledger.entries] == list(range(1, ok_ops + 1))
    assert ok_ops > 5_000  # the workload actually exercised both paths
