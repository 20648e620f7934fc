//! Operator pose selection and keypoint-deviation metrics.
//!
//! [`naive_detect`] keeps whichever person scores highest in each frame.
//! [`hierarchical_detect`] first discards everyone farther than the working
//! range, then locks onto the nearest remaining person, switching only when
//! another person is nearer by more than [`HYSTERESIS_M`].

pub mod filters;

pub use filters::{apply_filter, FilterConfig, FilterKind};

use crate::envsim::{ObservationFrame, PersonId, Pose};
use crate::error::{Error, Result};

pub const DEFAULT_RANGE_M: f64 = 2.0;
pub const HYSTERESIS_M: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFrame {
    pub keypoints: Pose,
    /// Which person the keypoints came from; evaluation only.
    pub source_person: PersonId,
    pub t: u64,
}

pub fn naive_detect(obs: &ObservationFrame) -> Option<KeypointFrame> {
    obs.persons
        .iter()
        .fold(None, |best: Option<&crate::envsim::PersonObservation>, p| match best {
            Some(b) if b.score >= p.score => Some(b),
            _ => Some(p),
        })
        .map(|p| KeypointFrame {
            keypoints: p.keypoints,
            source_person: p.person,
            t: obs.t,
        })
}

/// Target remembered between frames.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SelectionMemory {
    pub target: Option<PersonId>,
}

/// Gate by range, then keep the nearest person with hysteresis. `None`
/// means nobody is in range and downstream work should pause.
pub fn hierarchical_detect(obs: &ObservationFrame, range_m: f64, memory: &mut SelectionMemory) -> Option<KeypointFrame> {
    let in_range: Vec<_> = obs.persons.iter().filter(|p| p.distance <= range_m).collect();
    let nearest = in_range
        .iter()
        .copied()
        .fold(None, |best: Option<&crate::envsim::PersonObservation>, p| match best {
            Some(b) if b.distance <= p.distance => Some(b),
            _ => Some(p),
        });
    let Some(nearest) = nearest else {
        memory.target = None;
        return None;
    };
    let kept = memory
        .target
        .and_then(|id| in_range.iter().copied().find(|p| p.person == id))
        .filter(|cur| nearest.distance >= cur.distance - HYSTERESIS_M);
    let chosen = kept.unwrap_or(nearest);
    memory.target = Some(chosen.person);
    Some(KeypointFrame {
        keypoints: chosen.keypoints,
        source_person: chosen.person,
        t: obs.t,
    })
}

fn mean_point_distance(a: &Pose, b: &Pose) -> f64 {
    a.iter().zip(b).map(|(p, q)| p.distance(*q)).sum::<f64>() / a.len() as f64
}

/// Per-frame mean Euclidean distance over the keypoints, and the population
/// variance of that series.
pub fn keypoint_deviation(detected: &[Pose], truth: &[Pose]) -> Result<(Vec<f64>, f64)> {
    if detected.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: detected.len(),
            right: truth.len(),
        });
    }
    let series: Vec<f64> = detected.iter().zip(truth).map(|(d, t)| mean_point_distance(d, t)).collect();
    Ok((series.clone(), variance(&series)))
}

pub fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Fill frames without a detection with the last detected pose (or `fill`
/// before the first detection).
pub fn hold_last(frames: &[Option<KeypointFrame>], fill: Pose) -> Vec<KeypointFrame> {
    let mut last = KeypointFrame {
        keypoints: fill,
        source_person: PersonId::MAX,
        t: 0,
    };
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if let Some(f) = f {
                last = f.clone();
            }
            KeypointFrame {
                t: f.as_ref().map_or(i as u64 + 1, |f| f.t),
                ..last.clone()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::{pose_from, PersonObservation};
    use crate::geometry::Point3;

    fn person(id: PersonId, distance: f64, score: f64) -> PersonObservation {
        let root = Point3::new(distance, 0.0, 0.0);
        PersonObservation {
            person: id,
            keypoints: pose_from(root, root),
            distance,
            score,
        }
    }

    fn frame(persons: Vec<PersonObservation>) -> ObservationFrame {
        ObservationFrame { t: 1, persons }
    }

    #[test]
    fn naive_examples() {
        assert_eq!(naive_detect(&frame(vec![person(4, 1.0, 0.3)])).unwrap().source_person, 4);
        let f = frame(vec![person(0, 1.2, 0.7), person(1, 2.5, 0.9)]);
        assert_eq!(naive_detect(&f).unwrap().source_person, 1);
        assert!(naive_detect(&frame(vec![])).is_none());
    }

    #[test]
    fn hierarchical_examples() {
        let mut m = SelectionMemory::default();
        let f = frame(vec![person(0, 1.2, 0.5), person(1, 3.5, 0.99)]);
        assert_eq!(hierarchical_detect(&f, 2.0, &mut m).unwrap().source_person, 0);
        let mut m = SelectionMemory::default();
        assert!(hierarchical_detect(&frame(vec![person(0, 2.1, 0.9), person(1, 3.0, 0.9)]), 2.0, &mut m).is_none());
        assert_eq!(m.target, None);
        assert_eq!(
            hierarchical_detect(&frame(vec![person(2, 1.9, 0.1)]), 2.0, &mut m).unwrap().source_person,
            2
        );
    }

    #[test]
    fn hysteresis_keeps_target_until_clearly_beaten() {
        let mut m = SelectionMemory::default();
        hierarchical_detect(&frame(vec![person(0, 1.0, 0.5), person(1, 1.5, 0.5)]), 2.0, &mut m);
        assert_eq!(m.target, Some(0));
        let f = frame(vec![person(0, 1.2, 0.5), person(1, 1.15, 0.5)]);
        assert_eq!(hierarchical_detect(&f, 2.0, &mut m).unwrap().source_person, 0);
        let f = frame(vec![person(0, 1.3, 0.5), person(1, 1.1, 0.5)]);
        assert_eq!(hierarchical_detect(&f, 2.0, &mut m).unwrap().source_person, 1);
    }

    #[test]
    fn deviation_examples() {
        let p = pose_from(Point3::new(1.0, 0.0, 0.0), Point3::new(0.8, 0.0, 0.1));
        let (s, v) = keypoint_deviation(&[p, p, p], &[p, p, p]).unwrap();
        assert_eq!(s, vec![0.0; 3]);
        assert_eq!(v, 0.0);
        assert!(matches!(keypoint_deviation(&[p], &[]), Err(Error::LengthMismatch { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn persons() -> impl Strategy<Value = Vec<PersonObservation>> {
            proptest::collection::vec((0.0f64..5.0, 0.0f64..1.0), 0..5).prop_map(|v| {
                v.into_iter()
                    .enumerate()
                    .map(|(i, (d, s))| person(i as PersonId, d, s))
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn gating_is_sound(frames in proptest::collection::vec(persons(), 1..20), range in 0.5f64..3.0) {
                let mut m = SelectionMemory::default();
                for ps in frames {
                    let f = frame(ps);
                    if let Some(k) = hierarchical_detect(&f, range, &mut m) {
                        let p = f.persons.iter().find(|p| p.person == k.source_person).unwrap();
                        prop_assert!(p.distance <= range);
                    }
                }
            }

            #[test]
            fn single_in_range_person_matches_naive(d in 0.0f64..2.0, s in 0.0f64..1.0, others in proptest::collection::vec((2.01f64..6.0, 0.0f64..1.0), 0..4)) {
                let target = person(0, d, s);
                let mut ps = vec![target.clone()];
                ps.extend(others.into_iter().enumerate().map(|(i, (d, s))| person(i as PersonId + 1, d, s)));
                let mut m = SelectionMemory::default();
                let h = hierarchical_detect(&frame(ps), DEFAULT_RANGE_M, &mut m).unwrap();
                prop_assert_eq!(Some(h), naive_detect(&frame(vec![target])));
            }
        }
    }
}
