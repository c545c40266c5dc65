use proptest::prelude::*;

use nlkv_core::anticipation::{LkvSample, NlkvSample};
use nlkv_core::fields::{cell_contributions, estimate_vk_fields, Cell, GridSpec, Sign};
use nlkv_core::fitting::{compute_omega, ece_loss_scaled, lse_loss, nll_loss_scaled};
use nlkv_core::ingest::{
    parse_trajectories, segment_contiguous, write_canonical_csv, LengthUnit, Schema, TimeUnit,
    TrajectoryPoint, TrajectorySet, UnitDeclaration, ValidationConfig, VehicleTrajectory,
};
use nlkv_core::models::{logistic, FdParams};

/// Constant-speed vehicle: (start time, duration, speed, start position, step).
type VehicleSpec = (f64, f64, f64, f64, f64);

fn vehicle() -> impl Strategy<Value = VehicleSpec> {
    (0.0..300.0, 5.0..150.0, 1.0..30.0, 0.0..500.0, 0.5..3.0)
}

fn build(specs: &[VehicleSpec], dt: f64, dx: f64) -> Vec<VehicleTrajectory> {
    specs
        .iter()
        .enumerate()
        .map(|(n, &(t0, dur, v, x0, step))| {
            let steps = (dur / step).ceil() as usize;
            let pts = (0..=steps)
                .map(|s| {
                    let t = (s as f64 * step).min(dur);
                    TrajectoryPoint::new(t0 + t + dt, x0 + v * t + dx)
                })
                .collect();
            VehicleTrajectory::new(n.to_string(), pts)
        })
        .collect()
}

fn set_of(specs: &[VehicleSpec]) -> TrajectorySet {
    TrajectorySet::new(build(specs, 0.0, 0.0), UnitDeclaration::default()).unwrap()
}

fn to_csv(set: &TrajectorySet) -> String {
    let mut buf = Vec::new();
    write_canonical_csv(set, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn params() -> impl Strategy<Value = FdParams> {
    (0usize..3, 20.0..150.0, 100.0..400.0, 0.1..0.9, 100.0..10_000.0).prop_map(
        |(m, v0, k_jam, frac, lambda)| match m {
            0 => FdParams::Greenberg { v0, k_jam },
            1 => FdParams::Smulders {
                v0,
                k_crit: frac * k_jam,
                k_jam,
            },
            _ => FdParams::FranklinNewell { v0, lambda, k_jam },
        },
    )
}

/// NLKV samples in reporting units with both classes present.
fn nlkv_samples() -> impl Strategy<Value = Vec<NlkvSample>> {
    prop::collection::vec((1.0..95.0, 0.0..150.0, any::<bool>()), 2..60).prop_map(|mut v| {
        v[0].2 = true;
        v[1].2 = false;
        v.into_iter()
            .map(|(k, s, d)| {
                let y = if d { Sign::Decelerating } else { Sign::Accelerating };
                NlkvSample::new(k, s, y)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_csv_round_trips(specs in prop::collection::vec(vehicle(), 1..6)) {
        let set = set_of(&specs);
        let text = to_csv(&set);
        let back = parse_trajectories(text.as_bytes(), &Schema::canonical(), &ValidationConfig::default())
            .unwrap()
            .set;
        prop_assert_eq!(back.trajectories(), set.trajectories());
        prop_assert_eq!(to_csv(&back), text);
    }

    #[test]
    fn unit_conversion_is_linear(specs in prop::collection::vec(vehicle(), 1..5)) {
        let text = to_csv(&set_of(&specs));
        let si = parse_trajectories(text.as_bytes(), &Schema::canonical(), &ValidationConfig::default())
            .unwrap()
            .set;
        let scaled = Schema {
            time_unit: TimeUnit::Deciseconds,
            position_unit: LengthUnit::Feet,
            ..Schema::canonical()
        };
        let other = parse_trajectories(text.as_bytes(), &scaled, &ValidationConfig::default())
            .unwrap()
            .set;
        for (a, b) in si.trajectories().iter().zip(other.trajectories()) {
            for (p, q) in a.points.iter().zip(&b.points) {
                prop_assert!(close(q.t, 0.1 * p.t, 1e-12));
                prop_assert!(close(q.x, 0.3048 * p.x, 1e-12));
            }
        }
        prop_assert!(close(other.space_extent(), 0.3048 * si.space_extent(), 1e-12));
    }

    #[test]
    fn segments_partition_vehicles(
        specs in prop::collection::vec(vehicle(), 1..8),
        gap in 1.0..100.0,
    ) {
        let set = set_of(&specs);
        let segs = segment_contiguous(&set, gap);
        let mut ids: Vec<String> = segs
            .iter()
            .flat_map(|s| s.trajectories().iter().map(|t| t.vehicle_id.clone()))
            .collect();
        ids.sort();
        let mut all: Vec<String> = set.trajectories().iter().map(|t| t.vehicle_id.clone()).collect();
        all.sort();
        prop_assert_eq!(ids, all);
        // consecutive segments are separated by more than the gap
        for w in segs.windows(2) {
            let end = w[0].origin().t_s + w[0].time_extent();
            prop_assert!(w[1].origin().t_s - end > gap);
        }
    }

    #[test]
    fn edie_fields_match_summed_contributions(
        specs in prop::collection::vec((0.0..60.0, 60.0..150.0, 5.0..30.0, 0.0..200.0, 0.5..2.0), 1..5),
    ) {
        let set = set_of(&specs);
        let spec = GridSpec { dt: 20.0, dx: 100.0, ts: 7.0, xs: 31.0, tm: 12.0 };
        let Ok((v, k)) = estimate_vk_fields(&set, &spec) else { return Ok(()) };
        for (i, j, kk) in k.iter_defined() {
            let cell = Cell::of(&spec, i, j);
            let (dist, dur) = set.trajectories().iter().fold((0.0, 0.0), |acc, tr| {
                let c = cell_contributions(tr, &cell);
                (acc.0 + c.distance, acc.1 + c.duration)
            });
            let vv = v.get(i, j).unwrap();
            // flow identity q = k v = total distance / area
            prop_assert!(close(kk * vv * spec.dt * spec.dx, dist, 1e-9));
            prop_assert!(close(kk * spec.dt * spec.dx, dur, 1e-9));
        }
    }

    #[test]
    fn clipping_matches_fine_integration(
        spec in vehicle(),
        wiggle in prop::collection::vec(-0.4..0.4f64, 200),
        (t0, x0) in (0.0..200.0, 0.0..600.0),
    ) {
        // non-uniform speed via jittered positions, kept monotone
        let mut tr = build(&[spec], 0.0, 0.0).remove(0);
        let mut last = f64::NEG_INFINITY;
        for (p, w) in tr.points.iter_mut().zip(wiggle.iter().cycle()) {
            p.x = (p.x + w * spec.4 * spec.2).max(last);
            last = p.x;
        }
        let cell = Cell { t0, t1: t0 + 50.0, x0, x1: x0 + 300.0 };
        let c = cell_contributions(&tr, &cell);
        let h = 1e-3;
        let (t_first, t_last) = (tr.first().t, tr.last().t);
        let n = ((t_last - t_first) / h).ceil() as usize;
        let (mut dur, mut dist) = (0.0, 0.0);
        for s in 0..n {
            let ta = t_first + s as f64 * h;
            let tb = (ta + h).min(t_last);
            let tm = 0.5 * (ta + tb);
            let xm = tr.position_at(tm);
            if tm >= cell.t0 && tm <= cell.t1 && xm >= cell.x0 && xm <= cell.x1 {
                dur += tb - ta;
                dist += (tr.position_at(tb) - tr.position_at(ta)).abs();
            }
        }
        // each cell edge crossing can misplace at most one fine step
        let max_speed = spec.2 * 2.0 + 1.0;
        prop_assert!((c.duration - dur).abs() <= 4.0 * h + 1e-9);
        prop_assert!((c.distance - dist).abs() <= 4.0 * h * max_speed * 2.0 + 1e-6);
    }

    #[test]
    fn fields_are_translation_invariant(
        specs in prop::collection::vec((0.0..60.0, 60.0..150.0, 5.0..30.0, 0.0..200.0, 0.5..2.0), 1..5),
        shift_t in -1e4..1e4,
        shift_x in -1e4..1e4,
    ) {
        let spec = GridSpec { dt: 20.0, dx: 100.0, ts: 7.0, xs: 31.0, tm: 12.0 };
        let a = TrajectorySet::new(build(&specs, 0.0, 0.0), UnitDeclaration::default()).unwrap();
        let b = TrajectorySet::new(build(&specs, shift_t, shift_x), UnitDeclaration::default()).unwrap();
        let (Ok((va, ka)), Ok((vb, kb))) = (estimate_vk_fields(&a, &spec), estimate_vk_fields(&b, &spec)) else {
            return Ok(());
        };
        prop_assert_eq!(ka.shape(), kb.shape());
        for (i, j, x) in ka.iter_defined() {
            // 1e4 offsets cost about 12 bits of the coordinates
            if let Some(y) = kb.get(i, j) {
                prop_assert!(close(x, y, 1e-6));
                prop_assert!(close(va.get(i, j).unwrap(), vb.get(i, j).unwrap(), 1e-6));
            }
        }
    }

    #[test]
    fn models_are_monotone_non_increasing(p in params(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let k_jam = p.k_jam();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (k1, k2) = ((lo * k_jam).max(1e-6), (hi * k_jam).max(1e-6));
        let (v1, v2) = (p.speed(k1).unwrap(), p.speed(k2).unwrap());
        prop_assert!(v1 >= v2, "{p}: v({k1}) = {v1} < v({k2}) = {v2}");
        prop_assert!(v2 >= 0.0);
    }

    #[test]
    fn losses_ignore_order_and_duplication(p in params(), s in nlkv_samples(), rot in 0usize..60) {
        let omega = compute_omega(&s).unwrap();
        let ece = ece_loss_scaled(&p, &s, omega, 1.0).unwrap();
        let nll = nll_loss_scaled(&p, &s, 1.0).unwrap();

        let mut shuffled = s.clone();
        shuffled.reverse();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        prop_assert!(close(ece_loss_scaled(&p, &shuffled, omega, 1.0).unwrap(), ece, 1e-12));
        prop_assert!(close(nll_loss_scaled(&p, &shuffled, 1.0).unwrap(), nll, 1e-12));

        let doubled: Vec<NlkvSample> = s.iter().chain(&s).copied().collect();
        prop_assert_eq!(compute_omega(&doubled).unwrap(), omega);
        prop_assert!(close(ece_loss_scaled(&p, &doubled, omega, 1.0).unwrap(), ece, 1e-12));
        prop_assert!(close(nll_loss_scaled(&p, &doubled, 1.0).unwrap(), 2.0 * nll, 1e-12));

        let lkv: Vec<LkvSample> = s.iter().map(|x| LkvSample { k: x.k_a, v: x.v }).collect();
        let lkv2: Vec<LkvSample> = lkv.iter().chain(&lkv).copied().collect();
        prop_assert!(close(lse_loss(&p, &lkv2).unwrap(), lse_loss(&p, &lkv).unwrap(), 1e-12));
    }

    #[test]
    fn ece_is_lipschitz_in_speed(
        p in params(),
        s in nlkv_samples(),
        delta in -5.0..5.0f64,
        scale in 0.5..5.0f64,
    ) {
        let omega = compute_omega(&s).unwrap();
        let moved: Vec<NlkvSample> = s
            .iter()
            .map(|x| NlkvSample::new(x.k_a, x.v + delta, x.y))
            .collect();
        let a = ece_loss_scaled(&p, &s, omega, scale).unwrap();
        let b = ece_loss_scaled(&p, &moved, omega, scale).unwrap();
        // softplus has slope in [0, 1] and the class weights are at most 1
        prop_assert!((a - b).abs() <= delta.abs() / scale + 1e-12);
    }

    #[test]
    fn logistic_is_symmetric(z in -800.0..800.0f64) {
        let (a, b) = (logistic(z), logistic(-z));
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a + b - 1.0).abs() <= 1e-15);
    }
}
