use serde::{Deserialize, Serialize};

use super::{FeatError, FeatureSequence, Result};
use crate::matrix::Matrix;

/// What happens at the right edge when a window runs past the last frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StackEdge {
    /// One output per start index `k * step < T`; missing frames repeat the
    /// final input frame. Output count is `ceil(T / step)`.
    #[default]
    Pad,
    /// Only windows that fit entirely: `floor((T - context) / step) + 1`
    /// outputs, or a single padded window when `T < context`.
    Truncate,
}

/// Stacks `context` consecutive frames every `step` frames with
/// [`StackEdge::Pad`].
pub fn stack_frames(f: &FeatureSequence, context: usize, step: usize) -> Result<FeatureSequence> {
    stack_frames_with(f, context, step, StackEdge::Pad)
}

pub fn stack_frames_with(
    f: &FeatureSequence,
    context: usize,
    step: usize,
    edge: StackEdge,
) -> Result<FeatureSequence> {
    if context == 0 || step == 0 {
        return Err(FeatError::Config("context and step must be at least 1".into()));
    }
    let t = f.len();
    if t == 0 {
        return Err(FeatError::Empty);
    }
    let d = f.dim();
    let count = match edge {
        StackEdge::Pad => t.div_ceil(step),
        StackEdge::Truncate if t >= context => (t - context) / step + 1,
        StackEdge::Truncate => 1,
    };
    let mut out = Matrix::zeros(count, context * d);
    for k in 0..count {
        let row = out.row_mut(k);
        for c in 0..context {
            let src = (k * step + c).min(t - 1);
            row[c * d..(c + 1) * d].copy_from_slice(f.frame(src));
        }
    }
    FeatureSequence::new(out, f.frame_shift_ms() * step as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(t: usize, d: usize) -> FeatureSequence {
        let data = (0..t * d).map(|v| v as f32 * 0.5 - 3.0).collect();
        FeatureSequence::new(Matrix::from_vec(t, d, data), 10.0).unwrap()
    }

    #[test]
    fn full_window_examples() {
        let s = stack_frames_with(&seq(8, 80), 8, 3, StackEdge::Truncate).unwrap();
        assert_eq!((s.len(), s.dim()), (1, 640));
        let s = stack_frames_with(&seq(11, 80), 8, 3, StackEdge::Truncate).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.frame(1)[..80], *seq(11, 80).frame(3));
        assert_eq!(s.frame_shift_ms(), 30.0);
    }

    #[test]
    fn padded_output_repeats_final_frame() {
        let f = seq(8, 2);
        let s = stack_frames(&f, 8, 3).unwrap();
        assert_eq!(s.len(), 3);
        // Window starting at 6 covers 6, 7 then six copies of frame 7.
        let last = s.frame(2);
        assert_eq!(last[..2], *f.frame(6));
        for c in 1..8 {
            assert_eq!(last[c * 2..c * 2 + 2], *f.frame(7));
        }
    }

    #[test]
    fn random_index_map_holds() {
        let f = seq(20, 3);
        for (context, step) in [(8, 3), (5, 2), (1, 1), (3, 7)] {
            let s = stack_frames(&f, context, step).unwrap();
            for k in 0..s.len() {
                for c in 0..context {
                    for j in 0..3 {
                        let src = (k * step + c).min(19);
                        assert_eq!(s.frame(k)[c * 3 + j], f.frame(src)[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn empty_and_zero_arguments_are_errors() {
        let empty = FeatureSequence::new(Matrix::zeros(0, 4), 10.0).unwrap();
        assert!(matches!(stack_frames(&empty, 8, 3), Err(FeatError::Empty)));
        assert!(stack_frames(&seq(4, 2), 0, 3).is_err());
        assert!(stack_frames(&seq(4, 2), 2, 0).is_err());
    }

    #[test]
    fn frame_count_is_ceil_over_grid() {
        for t in 1..=64 {
            for step in [1, 2, 3] {
                for context in [1, 4, 8] {
                    let s = stack_frames(&seq(t, 2), context, step).unwrap();
                    assert_eq!(s.len(), t.div_ceil(step));
                    assert_eq!(s.dim(), 2 * context);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn stacking_is_a_pure_gather(t in 1usize..40, d in 1usize..6, context in 1usize..9, step in 1usize..5) {
            let f = seq(t, d);
            let s = stack_frames(&f, context, step).unwrap();
            let inputs: std::collections::HashSet<u32> = f.frames().as_slice().iter().map(|v| v.to_bits()).collect();
            for v in s.frames().as_slice() {
                prop_assert!(inputs.contains(&v.to_bits()));
            }
        }
    }
}
