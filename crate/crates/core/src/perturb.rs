//! Bounded travel-axis observation errors `(e_l, e_v)` and the test-time
//! perturbation strategies that generate them.

use crate::world::VehicleId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Half-width of the random error `e_l ~ U(-2, 2)`.
pub const RAND_HALF_WIDTH: f64 = 2.0;
/// Range of the base magnitude `|e0|` of the consistent strategies.
pub const BASE_MAGNITUDE: (f64, f64) = (9.0, 11.0);
/// Half-width of the band drawn around `e0`.
pub const BAND_HALF_WIDTH: f64 = 0.5;
/// Velocity error as a fraction of the location error.
pub const VELOCITY_RATIO: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    None,
    Rand,
    OverTime,
    TargetVehicles,
}

/// An immutable, seeded error generator. Every emitted error is a pure
/// function of `(seed, step, observer, target)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSchedule {
    pub kind: PerturbationKind,
    /// 2-norm bound on `(e_l, e_v)`; `None` means unbounded.
    pub epsilon_bound: Option<f64>,
    pub seed: u64,
    /// Signed base error `e0` of the consistent strategies.
    #[serde(default)]
    pub base: f64,
    /// Active step window `[start, end)` for the over-time strategy.
    #[serde(default)]
    pub window: (usize, usize),
    /// Persistent per-target location errors for the target-vehicle strategy.
    #[serde(default)]
    pub targets: BTreeMap<VehicleId, f64>,
}

/// One random-error draw.
pub fn sample_rand<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let e_l = rng.random_range(-RAND_HALF_WIDTH..RAND_HALF_WIDTH);
    (e_l, e_l * VELOCITY_RATIO)
}

/// Signed base error: magnitude from `U(9, 11)`, sign from a fair coin.
pub fn draw_base<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let mag = rng.random_range(BASE_MAGNITUDE.0..BASE_MAGNITUDE.1);
    if rng.random_bool(0.5) {
        mag
    } else {
        -mag
    }
}

fn band_draw<R: Rng + ?Sized>(rng: &mut R, base: f64) -> f64 {
    rng.random_range(base - BAND_HALF_WIDTH..base + BAND_HALF_WIDTH)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for the sub-stream named by `parts`.
pub fn sub_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(seed), |acc, p| splitmix(acc ^ splitmix(*p)))
}

fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, parts))
}

impl PerturbationSchedule {
    pub fn none() -> Self {
        Self {
            kind: PerturbationKind::None,
            epsilon_bound: None,
            seed: 0,
            base: 0.0,
            window: (0, 0),
            targets: BTreeMap::new(),
        }
    }

    pub fn rand(seed: u64) -> Self {
        Self {
            kind: PerturbationKind::Rand,
            seed,
            ..Self::none()
        }
    }

    /// Over-time strategy with an explicit signed base error.
    pub fn over_time_with_base(seed: u64, base: f64, window: (usize, usize)) -> Self {
        Self {
            kind: PerturbationKind::OverTime,
            seed,
            base,
            window,
            ..Self::none()
        }
    }

    /// Target-vehicle strategy with an explicit signed base error; each
    /// target's persistent error is drawn from the band around it.
    pub fn target_vehicles_with_base<R: Rng + ?Sized>(
        rng: &mut R,
        base: f64,
        targets: impl IntoIterator<Item = VehicleId>,
    ) -> Self {
        let targets = targets.into_iter().map(|id| (id, band_draw(rng, base))).collect();
        Self {
            kind: PerturbationKind::TargetVehicles,
            seed: rng.next_u64(),
            base,
            targets,
            ..Self::none()
        }
    }

    pub fn with_bound(mut self, epsilon: Option<f64>) -> Self {
        self.epsilon_bound = epsilon;
        self
    }

    /// Error `(e_l, e_v)` that `observer` suffers on `target` at step `t`.
    /// Self observations are always exact.
    pub fn error(&self, t: usize, observer: VehicleId, target: VehicleId) -> (f64, f64) {
        if observer == target {
            return (0.0, 0.0);
        }
        let e_l = match self.kind {
            PerturbationKind::None => return (0.0, 0.0),
            PerturbationKind::Rand => {
                let mut rng = stream(self.seed, &[t as u64, observer.0 as u64, target.0 as u64]);
                return sample_rand(&mut rng);
            }
            PerturbationKind::OverTime => {
                if t < self.window.0 || t >= self.window.1 {
                    return (0.0, 0.0);
                }
                // One draw per step, shared by every observed vehicle.
                band_draw(&mut stream(self.seed, &[t as u64]), self.base)
            }
            PerturbationKind::TargetVehicles => match self.targets.get(&target) {
                Some(e) => *e,
                None => return (0.0, 0.0),
            },
        };
        (e_l, e_l * VELOCITY_RATIO)
    }

    pub fn within_bound(&self, e_l: f64, e_v: f64) -> bool {
        self.epsilon_bound.is_none_or(|eps| e_l.hypot(e_v) <= eps)
    }
}

/// Over-time strategy: base error drawn once, per-step errors drawn from the
/// band around it inside `window`.
pub fn make_ptb_over_time<R: Rng + ?Sized>(rng: &mut R, window: (usize, usize)) -> PerturbationSchedule {
    let base = draw_base(rng);
    PerturbationSchedule::over_time_with_base(rng.next_u64(), base, window)
}

/// Target-vehicle strategy: every target keeps one error for the whole episode.
pub fn make_ptb_target_vehicles<R: Rng + ?Sized>(
    rng: &mut R,
    targets: impl IntoIterator<Item = VehicleId>,
) -> PerturbationSchedule {
    let base = draw_base(rng);
    PerturbationSchedule::target_vehicles_with_base(rng, base, targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: VehicleId = VehicleId(1);
    const B: VehicleId = VehicleId(2);
    const C: VehicleId = VehicleId(3);

    #[test]
    fn rand_draws_are_uniform_on_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws: Vec<(f64, f64)> = (0..10_000).map(|_| sample_rand(&mut rng)).collect();
        let mean = draws.iter().map(|d| d.0).sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!(draws.iter().all(|d| (-2.0..=2.0).contains(&d.0)));
        assert!(draws.iter().all(|d| d.1.abs() == d.0.abs() / 2.0));
    }

    #[test]
    fn none_is_identity() {
        let s = PerturbationSchedule::none();
        for t in 0..50 {
            assert_eq!(s.error(t, A, B), (0.0, 0.0));
        }
    }

    #[test]
    fn over_time_window_and_band() {
        let s = PerturbationSchedule::over_time_with_base(11, 10.0, (20, 40));
        assert_eq!(s.error(19, A, B), (0.0, 0.0));
        assert_eq!(s.error(40, A, B), (0.0, 0.0));
        for t in 20..40 {
            let (e, ev) = s.error(t, A, B);
            assert!((9.5..=10.5).contains(&e));
            assert_eq!(ev, e / 2.0);
            // Shared base across observed vehicles.
            let (e2, _) = s.error(t, A, C);
            assert!((e - e2).abs() <= 1.0);
        }
    }

    #[test]
    fn base_magnitude_between_nine_and_eleven() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bases: Vec<f64> = (0..2000).map(|_| draw_base(&mut rng)).collect();
        assert!(bases.iter().all(|b| (9.0..11.0).contains(&b.abs())));
        let positive = bases.iter().filter(|b| **b > 0.0).count();
        assert!((800..1200).contains(&positive));
    }

    #[test]
    fn target_vehicles_only_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = PerturbationSchedule::target_vehicles_with_base(&mut rng, -8.0, [B]);
        for t in 0..200 {
            assert_eq!(s.error(t, A, C), (0.0, 0.0));
            let (e, ev) = s.error(t, A, B);
            assert!((-8.5..=-7.5).contains(&e));
            assert_eq!(ev, e / 2.0);
            assert_eq!(s.error(t, B, B), (0.0, 0.0));
        }
    }

    #[test]
    fn seeded_schedules_reproduce() {
        let mk = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            make_ptb_over_time(&mut rng, (0, 200))
        };
        let (s1, s2) = (mk(), mk());
        assert_eq!(s1, s2);
        for t in 0..200 {
            assert_eq!(s1.error(t, A, B), s2.error(t, A, B));
        }
        let r = PerturbationSchedule::rand(4);
        assert_eq!(r.error(3, A, B), r.error(3, A, B));
        assert_ne!(r.error(3, A, B), r.error(4, A, B));
    }

    #[test]
    fn bound_check() {
        let s = PerturbationSchedule::rand(1).with_bound(Some(2.0));
        assert!(s.within_bound(1.6, 0.8));
        assert!(!s.within_bound(2.0, 1.0));
        assert!(PerturbationSchedule::rand(1).within_bound(1e9, 1e9));
    }
}
