//! Determinism, resume equivalence and checkpoint integrity of the grid runner.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;
use sta_core::sweep::{self, Axis, Cell, SweepJob, SweepOutcome, SweepTable};
use sta_core::Error;

fn toy(cell: &Cell) -> sta_core::Result<Vec<f64>> {
    // a little floating-point work whose result depends on the cell seed
    let mut acc = cell.coords.iter().map(|c| c.sin()).sum::<f64>();
    let mut s = cell.seed;
    for _ in 0..50 {
        s = sweep::splitmix64(s);
        acc += (s >> 11) as f64 / (1u64 << 53) as f64 * 1e-3;
    }
    Ok(vec![acc, (cell.seed >> 12) as f64])
}

fn job(nx: usize, ny: usize, seed: u64) -> SweepJob {
    let mut j = SweepJob::new(
        "toy",
        vec![Axis::linear("a", 0.0, 1.0, nx), Axis::linear("b", -2.0, 2.0, ny)],
    );
    j.seed = seed;
    j
}

fn bytes(t: &SweepTable) -> Vec<u8> {
    let mut buf = Vec::new();
    t.write_csv(&mut buf, &["value", "tag"]).unwrap();
    buf
}

fn complete(j: &SweepJob) -> SweepTable {
    sweep::run(j, toy).unwrap().into_table().unwrap()
}

#[test]
fn parallel_output_is_byte_identical() {
    let base = job(2, 2, 1);
    let serial = bytes(&complete(&base));
    for (threads, batch) in [(4, 1), (4, 64), (3, 2)] {
        let j = SweepJob { threads, batch, ..base.clone() };
        assert_eq!(bytes(&complete(&j)), serial);
    }
    let big = job(10, 10, 5);
    let serial = bytes(&complete(&big));
    assert_eq!(bytes(&complete(&SweepJob { threads: 4, batch: 7, ..big })), serial);
}

#[test]
fn rows_follow_lexicographic_order() {
    let t = complete(&SweepJob { threads: 4, batch: 3, ..job(3, 4, 0) });
    for (i, (cell, _)) in t.rows.iter().enumerate() {
        assert_eq!(cell.index, i as u64);
        assert_eq!(cell.indices, vec![i / 4, i % 4]);
    }
    let text = String::from_utf8(bytes(&t)).unwrap();
    assert!(text.starts_with("# seed=0\na,b,value,tag\n"));
}

#[test]
fn empty_axis_and_zero_threads_rejected() {
    let empty = SweepJob::new("toy", vec![Axis::new("a", vec![])]);
    assert!(matches!(sweep::run(&empty, toy), Err(Error::InvalidArgument(_))));
    let none = SweepJob::new("toy", vec![]);
    assert!(matches!(sweep::run(&none, toy), Err(Error::InvalidArgument(_))));
    let zero = SweepJob { threads: 0, ..job(2, 2, 0) };
    assert!(matches!(sweep::run(&zero, toy), Err(Error::InvalidArgument(_))));
}

#[test]
fn task_errors_propagate() {
    let r = sweep::run(&job(3, 3, 0), |c| {
        if c.index == 4 {
            Err(Error::InvalidArgument("boom".into()))
        } else {
            toy(c)
        }
    });
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
}

fn resume_to_end(j: &SweepJob, kills: &[usize], counter: &AtomicUsize) -> (SweepTable, usize) {
    let task = |c: &Cell| {
        counter.fetch_add(1, Ordering::SeqCst);
        toy(c)
    };
    let mut interrupts = 0;
    for &k in kills {
        match sweep::run(&SweepJob { stop_after: Some(k), ..j.clone() }, task).unwrap() {
            SweepOutcome::Interrupted { .. } => interrupts += 1,
            SweepOutcome::Complete(_) => {}
        }
    }
    let t = sweep::run(j, task).unwrap().into_table().unwrap();
    (t, interrupts)
}

#[test]
fn interrupted_sweep_reports_progress() {
    let dir = tempfile::tempdir().unwrap();
    let j = SweepJob { checkpoint: Some(dir.path().join("c.ckpt")), batch: 4, ..job(4, 5, 3) };
    match sweep::run(&SweepJob { stop_after: Some(6), ..j.clone() }, toy).unwrap() {
        SweepOutcome::Interrupted { completed, total } => assert_eq!((completed, total), (6, 20)),
        other => panic!("{other:?}"),
    }
    let again = sweep::run(&SweepJob { stop_after: Some(6), ..j.clone() }, toy).unwrap();
    assert!(matches!(again, SweepOutcome::Interrupted { completed: 12, total: 20 }));
    assert!(sweep::run(&SweepJob { stop_after: Some(0), ..j }, toy).unwrap().into_table().is_err());
}

#[test]
fn corrupt_checkpoints_are_errors_with_instructions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    let j = SweepJob { checkpoint: Some(path.clone()), batch: 2, ..job(3, 3, 9) };
    let _ = sweep::run(&SweepJob { stop_after: Some(4), ..j.clone() }, toy).unwrap();
    let good = std::fs::read(&path).unwrap();

    // flipped payload byte inside the second record
    let mut bad = good.clone();
    let rec = 12 + 2 * 8 + 8;
    bad[28 + rec + 14] ^= 0x40;
    std::fs::write(&path, &bad).unwrap();
    match sweep::run(&j, toy) {
        Err(Error::Checkpoint { reason, .. }) => {
            assert!(reason.contains("checksum") && reason.contains("truncate the file"), "{reason}")
        }
        other => panic!("{other:?}"),
    }

    // wrong magic
    let mut bad = good.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(sweep::run(&j, toy), Err(Error::Checkpoint { .. })));

    // a different job
    std::fs::write(&path, &good).unwrap();
    let other = SweepJob { seed: 10, ..j.clone() };
    match sweep::run(&other, toy) {
        Err(Error::Checkpoint { reason, .. }) => assert!(reason.contains("different job"), "{reason}"),
        other => panic!("{other:?}"),
    }

    // a torn tail record is dropped and recomputed
    let mut torn = good.clone();
    torn.truncate(good.len() - 5);
    std::fs::write(&path, &torn).unwrap();
    assert_eq!(bytes(&sweep::run(&j, toy).unwrap().into_table().unwrap()), bytes(&complete(&job(3, 3, 9))));

    // a torn header is not silently recomputed
    std::fs::write(&path, &good[..10]).unwrap();
    assert!(matches!(sweep::run(&j, toy), Err(Error::Checkpoint { .. })));
}

#[test]
fn checkpoint_layout_is_as_documented() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    let j = SweepJob { checkpoint: Some(path.clone()), ..job(1, 2, 0x1234) };
    let t = complete(&j);
    let b = std::fs::read(&path).unwrap();
    assert_eq!(&b[..8], sweep::CHECKPOINT_MAGIC);
    assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
    assert_eq!(u64::from_le_bytes(b[12..20].try_into().unwrap()), 0x1234);
    assert_eq!(u64::from_le_bytes(b[20..28].try_into().unwrap()), j.fingerprint());
    let rec = &b[28..28 + 36];
    assert_eq!(u64::from_le_bytes(rec[..8].try_into().unwrap()), 0);
    assert_eq!(u32::from_le_bytes(rec[8..12].try_into().unwrap()), 2);
    assert_eq!(f64::from_le_bytes(rec[12..20].try_into().unwrap()), t.rows[0].1[0]);
    assert_eq!(u64::from_le_bytes(rec[28..36].try_into().unwrap()), sweep::fnv1a64(&rec[..28]));
    assert_eq!(b.len(), 28 + 2 * 36);
    let (done, valid) = sweep::read_checkpoint(&path, 0x1234, j.fingerprint(), 2).unwrap();
    assert_eq!(valid, b.len() as u64);
    assert!(done.iter().all(Option::is_some));
}

#[test]
fn fnv_reference_values() {
    // published FNV-1a 64 test vectors
    assert_eq!(sweep::fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
    assert_eq!(sweep::fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    assert_eq!(sweep::fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
}

#[test]
fn empty_checkpoint_file_starts_fresh() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    std::fs::File::create(&path).unwrap().flush().unwrap();
    let j = SweepJob { checkpoint: Some(path), ..job(2, 3, 1) };
    assert_eq!(bytes(&complete(&j)), bytes(&complete(&job(2, 3, 1))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn resume_after_random_kills_matches_an_uninterrupted_run(
        nx in 1usize..6,
        ny in 1usize..6,
        seed in any::<u64>(),
        threads in 1usize..4,
        batch in 1usize..5,
        kills in proptest::collection::vec(0usize..8, 0..5),
        tear in any::<bool>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let base = job(nx, ny, seed);
        let oracle = bytes(&complete(&base));
        let j = SweepJob { threads, batch, checkpoint: Some(path.clone()), ..base };
        let counter = AtomicUsize::new(0);
        let task = |c: &Cell| {
            counter.fetch_add(1, Ordering::SeqCst);
            toy(c)
        };
        let mut torn = 0;
        for &k in &kills {
            let _ = sweep::run(&SweepJob { stop_after: Some(k), ..j.clone() }, task).unwrap();
            if tear {
                // simulate a crash in the middle of the last append
                let len = std::fs::metadata(&path).unwrap().len();
                if len > 28 {
                    std::fs::OpenOptions::new().write(true).open(&path).unwrap().set_len(len - 3).unwrap();
                    torn += 1;
                }
            }
        }
        let t = sweep::run(&j, task).unwrap().into_table().unwrap();
        prop_assert_eq!(bytes(&t), oracle);
        // each cell once, plus one recomputation per torn record
        prop_assert_eq!(counter.load(Ordering::SeqCst), nx * ny + torn);
    }
}

#[test]
fn kills_without_tearing_evaluate_each_cell_once() {
    let dir = tempfile::tempdir().unwrap();
    let j = SweepJob { checkpoint: Some(dir.path().join("c.ckpt")), batch: 3, threads: 2, ..job(10, 10, 77) };
    let counter = AtomicUsize::new(0);
    let (t, interrupts) = resume_to_end(&j, &[5, 17, 1, 40], &counter);
    assert_eq!(interrupts, 4);
    assert_eq!(counter.load(Ordering::SeqCst), 100);
    assert_eq!(bytes(&t), bytes(&complete(&job(10, 10, 77))));
}
