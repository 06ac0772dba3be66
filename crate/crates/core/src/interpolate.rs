//! Linear blending of pose states in `(μ, L)` space.
//!
//! For `α ∈ [0, 1]` a blend of two valid states is valid: each factor diagonal
//! is a convex combination of positive numbers. Outside that range a diagonal
//! can cross zero; such states are still returned, tagged, because `L·Lᵀ`
//! stays positive semidefinite.

use crate::error::{Error, Result};
use crate::state::{PoseState, StateSequence};

/// A blended state plus the landmarks whose factor diagonal is not positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Blend {
    pub state: PoseState,
    pub invalid_landmarks: Vec<usize>,
}

impl Blend {
    pub fn is_valid(&self) -> bool {
        self.invalid_landmarks.is_empty()
    }
}

/// `(1 − α)·a + α·b` over all packed parameters.
pub fn lerp_state(a: &PoseState, b: &PoseState, alpha: f64) -> Result<Blend> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("cannot blend {} landmarks with {}", a.landmarks(), b.landmarks())));
    }
    if !alpha.is_finite() {
        return Err(Error::NonFinite(format!("alpha {alpha}")));
    }
    a.validate()?;
    b.validate()?;
    let params = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| {
            // Exact at the endpoints.
            if alpha == 0.0 {
                x
            } else if alpha == 1.0 {
                y
            } else {
                (1.0 - alpha) * x + alpha * y
            }
        })
        .collect();
    let state = PoseState::from_vec(params)?;
    let invalid_landmarks = state.invalid_landmarks();
    Ok(Blend { state, invalid_landmarks })
}

/// `steps` frames at `α = i / (steps − 1)`.
pub fn interpolate_sequence(a: &PoseState, b: &PoseState, steps: usize) -> Result<StateSequence> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    let last = (steps - 1) as f64;
    let frames =
        (0..steps).map(|i| lerp_state(a, b, i as f64 / last).map(|blend| blend.state)).collect::<Result<Vec<_>>>()?;
    StateSequence::new(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(v: &[f64]) -> PoseState {
        PoseState::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn examples() {
        let a = st(&[0.0, 0.0, 1.0, 0.0, 1.0]);
        let b = st(&[2.0, 2.0, 3.0, 0.0, 3.0]);
        assert_eq!(lerp_state(&a, &b, 0.0).unwrap().state, a);
        assert_eq!(lerp_state(&a, &b, 1.0).unwrap().state, b);
        assert_eq!(lerp_state(&a, &b, 0.5).unwrap().state.as_slice(), &[1.0, 1.0, 2.0, 0.0, 2.0]);
        let ext = lerp_state(&a, &b, 1.5).unwrap();
        assert_eq!(ext.state.as_slice(), &[3.0, 3.0, 4.0, 0.0, 4.0]);
        assert!(ext.is_valid());
    }

    #[test]
    fn extrapolation_tags_invalid_factor() {
        let a = st(&[0.0, 0.0, 1.0, 0.0, 1.0]);
        let b = st(&[0.0, 0.0, 0.2, 0.0, 2.0]);
        let blend = lerp_state(&a, &b, 2.0).unwrap();
        assert_eq!(blend.invalid_landmarks, vec![0]);
        assert!((blend.state.factor(0)[0] + 0.6).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatch_and_short_sequences() {
        let a = st(&[0.0, 0.0, 1.0, 0.0, 1.0]);
        let b = st(&[0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(matches!(lerp_state(&a, &b, 0.5), Err(Error::ShapeMismatch(_))));
        assert!(interpolate_sequence(&a, &a, 1).is_err());
    }

    #[test]
    fn sequence_endpoints_and_midpoint() {
        let a = st(&[0.1, -0.3, 0.2, 0.05, 0.1]);
        let b = st(&[-0.4, 0.7, 0.1, -0.02, 0.3]);
        let two = interpolate_sequence(&a, &b, 2).unwrap();
        assert_eq!(two.frames(), &[a.clone(), b.clone()]);

        let seq = interpolate_sequence(&a, &b, 31).unwrap();
        assert_eq!(seq.frames()[0], a);
        assert_eq!(seq.frames()[30], b);
        assert_eq!(seq.frames()[15], lerp_state(&a, &b, 0.5).unwrap().state);
    }

    #[test]
    fn thirty_frames_with_uniform_spacing() {
        let a = st(&[0.0, 0.0, 0.1, 0.0, 0.1]);
        let b = st(&[0.58, -0.29, 0.1, 0.0, 0.1]);
        let seq = interpolate_sequence(&a, &b, 30).unwrap();
        assert_eq!(seq.len(), 30);
        let step = [0.58 / 29.0, -0.29 / 29.0];
        for w in seq.frames().windows(2) {
            let d = [w[1].mu(0)[0] - w[0].mu(0)[0], w[1].mu(0)[1] - w[0].mu(0)[1]];
            assert!((d[0] - step[0]).abs() < 1e-14 && (d[1] - step[1]).abs() < 1e-14);
        }
    }
}
