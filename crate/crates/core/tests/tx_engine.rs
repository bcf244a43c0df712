use hercules_core::{boot, Address, CrashCtl, Machine, SimConfig, SimError};

fn stress() -> SimConfig {
    SimConfig::stress()
}

#[test]
fn commit_makes_writes_visible_and_durable() {
    let cfg = stress();
    let mut m = Machine::new(&cfg, true).unwrap();
    m.tx_start(0).unwrap();
    for i in 0..8u64 {
        m.store_u64(0, 0x1000 + i * 64, i + 1).unwrap();
    }
    let rep = m.tx_commit(0).unwrap();
    assert_eq!(rep.len, 8);
    m.check_invariants().unwrap();
    let (pmem, _) = m.power_off(false);
    let (m2, rec) = boot(&cfg, pmem, true).unwrap();
    assert!(rec.is_some());
    for i in 0..8u64 {
        assert_eq!(m2.pmem().peek_home(Address(0x1000 + i * 64))[..8], (i + 1).to_le_bytes());
    }
}

#[test]
fn uncommitted_writes_are_discarded_after_crash() {
    let cfg = stress();
    let mut m = Machine::new(&cfg, true).unwrap();
    m.store_u64(0, 0x2000, 7).unwrap();
    m.tx_start(0).unwrap();
    // Enough lines to force premature flushes out of the tiny caches.
    for i in 0..120u64 {
        m.store_u64(0, 0x10_0000 + i * 64, 99).unwrap();
    }
    m.store_u64(0, 0x2000, 8).unwrap();
    assert!(m.mc.counters.premature_flushes > 0);
    m.check_invariants().unwrap();
    let (pmem, _) = m.power_off(false);
    let (m2, rec) = boot(&cfg, pmem, true).unwrap();
    assert!(rec.unwrap().discarded > 0);
    assert_eq!(m2.peek_u64(0x2000), 7);
    assert_eq!(m2.peek_u64(0x10_0000), 0);
}

#[test]
fn large_committed_tx_survives_crash() {
    let cfg = stress();
    let mut m = Machine::new(&cfg, true).unwrap();
    m.tx_start(0).unwrap();
    for i in 0..120u64 {
        m.store_u64(0, 0x10_0000 + i * 64, i).unwrap();
    }
    m.tx_commit(0).unwrap();
    m.check_invariants().unwrap();
    let (pmem, _) = m.power_off(false);
    let (m2, _) = boot(&cfg, pmem, true).unwrap();
    for i in 0..120u64 {
        assert_eq!(m2.peek_u64(0x10_0000 + i * 64), i);
    }
}

#[test]
fn nested_start_is_rejected() {
    let mut m = Machine::new(&stress(), true).unwrap();
    m.tx_start(0).unwrap();
    assert_eq!(m.tx_start(0).unwrap_err(), SimError::NestedTransaction(0));
    assert_eq!(m.tx_commit(1).unwrap_err(), SimError::NoActiveTx(1));
}

#[test]
fn foreign_reader_sees_original_copy() {
    let mut cfg = stress();
    cfg.isolation_abort_on_conflict = false;
    let mut m = Machine::new(&cfg, true).unwrap();
    m.store_u64(0, 0x3000, 1).unwrap();
    m.tx_start(0).unwrap();
    m.store_u64(0, 0x3000, 2).unwrap();
    assert_eq!(m.load_u64(1, 0x3000).unwrap(), 1);
    assert!(matches!(m.store_u64(1, 0x3000, 3), Err(SimError::TxConflict { owner: 0, .. })));
    m.tx_commit(0).unwrap();
    assert_eq!(m.load_u64(1, 0x3000).unwrap(), 2);
    m.check_invariants().unwrap();
}

#[test]
fn conflicting_writer_aborts_owner_when_enabled() {
    let mut cfg = stress();
    cfg.isolation_abort_on_conflict = true;
    let mut m = Machine::new(&cfg, true).unwrap();
    m.store_u64(0, 0x3000, 1).unwrap();
    let t = m.tx_start(0).unwrap().tx_id;
    m.store_u64(0, 0x3000, 2).unwrap();
    m.store_u64(1, 0x3000, 3).unwrap();
    assert_eq!(m.tx_commit(0).unwrap_err(), SimError::TxAborted(t));
    assert_eq!(m.load_u64(0, 0x3000).unwrap(), 3);
    m.check_invariants().unwrap();
}

#[test]
fn context_switch_moves_transaction_between_cores() {
    let cfg = stress();
    let mut m = Machine::new(&cfg, true).unwrap();
    m.tx_start(0).unwrap();
    m.store_u64(0, 0x4000, 5).unwrap();
    let saved = m.context_save(0).unwrap();
    m.context_restore(1, saved).unwrap();
    m.store_u64(1, 0x4000, 6).unwrap();
    m.store_u64(1, 0x4040, 6).unwrap();
    m.check_invariants().unwrap();
    let rep = m.tx_commit(1).unwrap();
    assert_eq!(rep.len, 2);
    assert_eq!(m.load_u64(0, 0x4000).unwrap(), 6);
    m.check_invariants().unwrap();
}

#[test]
fn every_crash_point_of_a_small_run_recovers() {
    let cfg = stress();
    let run = |m: &mut Machine| -> Result<(), SimError> {
        for k in 0..6u64 {
            m.tx_start(0)?;
            for i in 0..120u64 {
                m.store_u64(0, 0x20_0000 + ((k * 37 + i * 11) % 300) * 64, k + 1)?;
            }
            m.tx_commit(0)?;
        }
        Ok(())
    };
    let mut probe = Machine::new(&cfg, true).unwrap();
    run(&mut probe).unwrap();
    let total = probe.crash.events();
    let step = (total / 60).max(1);
    let mut idx = 0;
    while idx < total {
        let mut m = Machine::new(&cfg, true).unwrap();
        m.crash = CrashCtl::crash_at(idx);
        let err = run(&mut m).unwrap_err();
        assert!(err.is_crash());
        m.check_invariants().unwrap();
        let committed = m.crash.landed_commits().len() as u64;
        let (pmem, _) = m.power_off(false);
        let (m2, _) = boot(&cfg, pmem, true).unwrap();
        // All lines must hold the value of the last durable transaction
        // that wrote them.
        for line in 0..300u64 {
            let mut expect = 0;
            for k in 0..committed {
                if (0..120u64).any(|i| (k * 37 + i * 11) % 300 == line) {
                    expect = k + 1;
                }
            }
            assert_eq!(m2.peek_u64(0x20_0000 + line * 64), expect, "crash at {idx}, line {line}");
        }
        idx += step;
    }
}
