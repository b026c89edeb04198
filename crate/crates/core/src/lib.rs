//! Convex lower and concave upper bounds on the softmax function over a box
//! of logits, their tangent-plane linearizations, a synthetic tightness
//! harness, and an LP-based verifier for uncertainty scores of small ReLU
//! ensembles.
//!
//! ```
//! use softbound::{BoundKind, Hyperbox, SoftmaxBounds};
//!
//! let region = Hyperbox::new(vec![0.0, -2.0], vec![0.0, 2.0]).unwrap();
//! let b = SoftmaxBounds::new(region, 0).unwrap();
//! let lo = b.value(BoundKind::ErLo, &[0.0, 0.0]).unwrap();
//! let hi = b.value(BoundKind::LseHi, &[0.0, 0.0]).unwrap();
//! assert!(lo < 0.5 && 0.5 < hi);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bounds;
pub mod error;
pub mod linearized;
pub mod lp;
pub mod netverify;
pub mod par;
pub mod synth;

pub use bounds::{
    argmax_midpoint, bound_er, bound_lin, bound_lse, const_bounds, diff_box, evaluate, lin_aux,
    lse, lse_prime_aux, se, se_chord, softmax, BoundKind, ConstBounds, DiffBox, Hyperbox, LinAux,
    LsePrimeAux, LseVariant, Side, SoftmaxBounds,
};
pub use error::{Error, Result};
pub use linearized::{
    finite_diff_grad, grad, gradient_check, tangent_plane, AffineBound, GradCheck, TangentSpec,
};
pub use par::Exec;
