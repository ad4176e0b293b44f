//! Properties of the sigma schedule over random loss tables.

use adaloss::scheduler::{replay, EscapeGate, LossTable, SchedulerConfig};
use proptest::prelude::*;

fn tables() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=4, 5usize..=40).prop_flat_map(|(l, e)| {
        proptest::collection::vec(proptest::collection::vec(0.0f64..5.0, l), e)
    })
}

proptest! {
    #[test]
    fn sigma_stays_within_bounds(losses in tables(), sigma0 in 1.5f64..64.0, restrict in any::<bool>()) {
        let cfg = SchedulerConfig { restrict_increase: restrict, ..SchedulerConfig::default() };
        let traj = replay(&LossTable::new(losses).unwrap(), &cfg, sigma0).unwrap();
        for row in traj.sigmas.iter().chain(std::iter::once(&traj.next)) {
            for &s in row {
                prop_assert!(s >= cfg.sigma_min && s <= sigma0);
            }
        }
    }

    #[test]
    fn warm_up_keeps_initial_sigma(losses in tables(), sigma0 in 1.5f64..64.0) {
        let cfg = SchedulerConfig::default();
        let traj = replay(&LossTable::new(losses).unwrap(), &cfg, sigma0).unwrap();
        for row in traj.sigmas.iter().take(cfg.warmup_epochs()) {
            prop_assert!(row.iter().all(|&s| s == sigma0));
        }
    }

    #[test]
    fn without_escapes_sigma_never_increases(losses in tables(), sigma0 in 1.5f64..64.0) {
        let cfg = SchedulerConfig::default();
        let traj = replay(&LossTable::new(losses).unwrap(), &cfg, sigma0).unwrap();
        let mut rows = traj.sigmas.clone();
        rows.push(traj.next.clone());
        for (i, pair) in rows.windows(2).enumerate() {
            let escaped_here = traj.escape_epochs.contains(&traj.epochs[i]);
            for (a, b) in pair[0].iter().zip(&pair[1]) {
                prop_assert!(b <= a || escaped_here);
            }
        }
    }

    #[test]
    fn monotone_decreasing_losses_never_escape(start in 1.0f64..10.0, decay in 0.5f64..0.99, epochs in 5usize..40) {
        let losses: Vec<Vec<f64>> = (0..epochs).map(|t| vec![start * decay.powi(t as i32)]).collect();
        let traj = replay(&LossTable::new(losses).unwrap(), &SchedulerConfig::default(), 16.0).unwrap();
        prop_assert!(traj.escape_epochs.is_empty());
    }

    #[test]
    fn permuting_landmarks_permutes_trajectories(losses in tables(), shift in 0usize..4) {
        let l = losses[0].len();
        let rotated: Vec<Vec<f64>> = losses
            .iter()
            .map(|row| (0..l).map(|i| row[(i + shift) % l]).collect())
            .collect();
        let cfg = SchedulerConfig::default();
        let a = replay(&LossTable::new(losses).unwrap(), &cfg, 16.0).unwrap();
        let b = replay(&LossTable::new(rotated).unwrap(), &cfg, 16.0).unwrap();
        for (ra, rb) in a.sigmas.iter().zip(&b.sigmas) {
            for i in 0..l {
                prop_assert_eq!(rb[i], ra[(i + shift) % l]);
            }
        }
    }

    #[test]
    fn constant_tail_freezes_sigma_after_one_window(
        head in proptest::collection::vec(0.0f64..5.0, 1..20),
        value in 0.0f64..5.0,
    ) {
        let cfg = SchedulerConfig::default();
        let k = head.len();
        let mut losses: Vec<Vec<f64>> = head.into_iter().map(|v| vec![v]).collect();
        losses.extend(std::iter::repeat_n(vec![value], 15));
        let traj = replay(&LossTable::new(losses).unwrap(), &cfg, 16.0).unwrap();
        // the update after epoch k + w - 1 is the first one whose window is
        // constant; every sigma in effect from epoch k + w on is the same
        let col = traj.column(0);
        for s in &col[k + cfg.window..] {
            prop_assert_eq!(*s, traj.next[0]);
        }
    }

    #[test]
    fn escape_gates_agree_for_one_landmark(losses in proptest::collection::vec(proptest::collection::vec(0.0f64..5.0, 1), 5..30)) {
        let table = LossTable::new(losses).unwrap();
        let a = replay(&table, &SchedulerConfig::default(), 16.0).unwrap();
        let cfg = SchedulerConfig { escape_gate: EscapeGate::TotalLoss, ..SchedulerConfig::default() };
        let b = replay(&table, &cfg, 16.0).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn geometric_loss_decay_sharpens_by_a_constant_step() {
    // a geometric sequence with ratio q scales the window variance by q² per
    // epoch, so every step after warm-up is ρ(1 − 1/q²)
    let q: f64 = 0.5;
    let losses: Vec<Vec<f64>> = (0..8).map(|t| vec![q.powi(t)]).collect();
    let traj = replay(&LossTable::new(losses).unwrap(), &SchedulerConfig::default(), 64.0).unwrap();
    let col = traj.column(0);
    let step = 0.9 * (1.0 - 1.0 / (q * q));
    assert_eq!(&col[..4], &[64.0; 4]);
    for pair in col[3..].windows(2) {
        assert!((pair[1] - pair[0] - step).abs() < 1e-12);
    }
}

#[test]
fn replay_reads_and_writes_the_documented_csv_layout() {
    let text = "epoch,landmark_0,landmark_1\n0,1.0,2.0\n1,0.9,1.9\n2,0.8,1.9\n3,0.5,1.9\n4,0.3,1.9\n";
    let table = LossTable::read_csv(text.as_bytes()).unwrap();
    assert_eq!(table.landmarks(), 2);
    let traj = replay(&table, &SchedulerConfig::default(), 16.0).unwrap();
    let mut out = Vec::new();
    traj.write_csv(&mut out).unwrap();
    let out = String::from_utf8(out).unwrap();
    assert!(out.starts_with("epoch,sigma_0,sigma_1\n0,16,16\n"));
    assert_eq!(out.lines().count(), 6);
}
