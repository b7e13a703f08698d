//! Numerically robust subspace algebra over ℝᴺ.
//!
//! Subspaces carry orthonormal bases obtained from singular value
//! decompositions with a relative rank cutoff; the zero subspace is an
//! explicit empty basis (a matrix with zero columns), never a near-zero
//! vector. On top of the primitives — kernel, image, sum, intersection,
//! preimage, orthogonal projector — sits the descending fixed-point
//! iteration that computes the largest subspace `V ⊆ W` satisfying
//! `A·V ⊆ V + Σᵢ Im 𝒞ᵢ`, the workhorse of the mode-ladder analysis in
//! [`crate::invariance`].

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Dense column-major double-precision matrix, the currency of the crate.
pub type Matrix = DMatrix<f64>;
/// Dense column vector.
pub type Vector = DVector<f64>;

/// Relative singular-value cutoff: `σ ≤ RANK_TOL·σ_max` counts as zero.
pub const RANK_TOL: f64 = 1e-10;
/// Subspace-equality threshold on the Frobenius distance of projectors.
pub const SUBSPACE_EQ_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SubspaceError {
    #[error("ambient dimensions differ: {left} vs {right}")]
    AmbientMismatch { left: usize, right: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// A linear subspace of ℝᴺ, stored as an `N × dim` matrix with
/// orthonormal columns. `dim = 0` is the zero subspace.
#[derive(Debug, Clone)]
pub struct Subspace {
    ambient: usize,
    basis: Matrix,
}

impl Subspace {
    /// The zero subspace of ℝᴺ.
    pub fn zero(ambient: usize) -> Self {
        Subspace {
            ambient,
            basis: Matrix::zeros(ambient, 0),
        }
    }

    /// All of ℝᴺ.
    pub fn full(ambient: usize) -> Self {
        Subspace {
            ambient,
            basis: Matrix::identity(ambient, ambient),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn is_zero(&self) -> bool {
        self.dim() == 0
    }

    /// Orthonormal basis, one column per dimension.
    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    /// Orthogonal projector `Π = UUᵀ` onto the subspace.
    pub fn projector(&self) -> Matrix {
        if self.is_zero() {
            Matrix::zeros(self.ambient, self.ambient)
        } else {
            &self.basis * self.basis.transpose()
        }
    }

    /// Whether `other` spans the same subspace, measured as
    /// `‖Π₁ − Π₂‖_F < SUBSPACE_EQ_TOL`.
    pub fn approx_eq(&self, other: &Subspace) -> bool {
        self.ambient == other.ambient
            && (self.projector() - other.projector()).norm() < SUBSPACE_EQ_TOL
    }

    /// Whether `self ⊆ other`, measured as `‖Π_other·Π_self − Π_self‖_F`
    /// staying below `SUBSPACE_EQ_TOL`.
    pub fn is_subspace_of(&self, other: &Subspace) -> bool {
        if self.ambient != other.ambient {
            return false;
        }
        let p = self.projector();
        (other.projector() * &p - p).norm() < SUBSPACE_EQ_TOL
    }

    /// Distance of a vector to the subspace, `‖x − Πx‖`.
    pub fn distance(&self, x: &Vector) -> f64 {
        (x - self.projector() * x).norm()
    }
}

fn check_ambient(s1: &Subspace, s2: &Subspace) -> Result<usize, SubspaceError> {
    if s1.ambient != s2.ambient {
        return Err(SubspaceError::AmbientMismatch {
            left: s1.ambient,
            right: s2.ambient,
        });
    }
    Ok(s1.ambient)
}

/// Number of singular values above the cutoff `rank_tol · max(σ_max,
/// scale_floor)`. The floor matters for matrices produced by catastrophic
/// cancellation — e.g. `(I − Π)A` with `Π ≈ I`, or `Cᵀ + I` with
/// `C ≈ −I` — which should be rank 0 but consist of ~1e−16 noise that a
/// purely relative cutoff would happily promote to full rank. Callers
/// that know the pre-cancellation scale pass it as the floor; 0 recovers
/// the plain relative rule.
fn numerical_rank(singular_values: &[f64], rank_tol: f64, scale_floor: f64) -> usize {
    let sigma_max = singular_values.iter().cloned().fold(0.0, f64::max);
    if !sigma_max.is_finite() {
        return 0;
    }
    let scale = sigma_max.max(scale_floor);
    if !(scale > 0.0) {
        return 0;
    }
    singular_values
        .iter()
        .filter(|&&s| s > rank_tol * scale)
        .count()
}

/// Span of a set of vectors, with an orthonormal basis. Duplicates and
/// near-dependent vectors collapse; an empty set gives the zero subspace.
pub fn orthonormalize(
    ambient: usize,
    vectors: &[Vector],
    rank_tol: f64,
) -> Result<Subspace, SubspaceError> {
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != ambient {
            return Err(SubspaceError::Shape(format!(
                "vector {i} has length {}, expected {ambient}",
                v.len()
            )));
        }
    }
    if vectors.is_empty() {
        return Ok(Subspace::zero(ambient));
    }
    let m = Matrix::from_columns(vectors);
    Ok(image(&m, rank_tol))
}

/// Null space of a (possibly rectangular) matrix, as a subspace of the
/// domain ℝ^ncols.
pub fn kernel(m: &Matrix, rank_tol: f64) -> Subspace {
    kernel_with_floor(m, rank_tol, 0.0)
}

/// [`kernel`] with an explicit scale floor for the rank decision; see
/// [`image_with_floor`] for when a floor is appropriate.
pub fn kernel_with_floor(m: &Matrix, rank_tol: f64, scale_floor: f64) -> Subspace {
    let n = m.ncols();
    if n == 0 {
        return Subspace::zero(0);
    }
    // The thin SVD of a wide matrix materializes only `nrows` right
    // singular vectors and would silently drop null directions; pad with
    // zero rows so V is square over the domain.
    let work = if m.nrows() < n {
        let mut padded = Matrix::zeros(n, n);
        padded.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
        padded
    } else {
        m.clone()
    };
    let svd = work.svd(false, true);
    let v_t = svd
        .v_t
        .expect("SVD was computed with right singular vectors");
    let rank = numerical_rank(svd.singular_values.as_slice(), rank_tol, scale_floor);
    let basis = v_t.rows(rank, n - rank).transpose();
    Subspace { ambient: n, basis }
}

/// Column space of a matrix, as a subspace of the codomain ℝ^nrows.
pub fn image(m: &Matrix, rank_tol: f64) -> Subspace {
    image_with_floor(m, rank_tol, 0.0)
}

/// [`image`] with an explicit scale floor: singular values must exceed
/// `rank_tol · max(σ_max, scale_floor)` to count toward the rank. Use
/// this when the matrix came out of a cancellation (difference of
/// near-equal terms, map composed with a projector, ...) and its natural
/// scale is known: a purely relative cutoff would read the leftover
/// ~1e−16 noise of an exactly-zero result as a full-rank matrix.
pub fn image_with_floor(m: &Matrix, rank_tol: f64, scale_floor: f64) -> Subspace {
    if m.ncols() == 0 {
        return Subspace::zero(m.nrows());
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("SVD was computed with left singular vectors");
    let rank = numerical_rank(svd.singular_values.as_slice(), rank_tol, scale_floor);
    Subspace {
        ambient: m.nrows(),
        basis: u.columns(0, rank).into_owned(),
    }
}

/// Sum `S₁ + S₂ = span(S₁ ∪ S₂)`.
pub fn sum(s1: &Subspace, s2: &Subspace) -> Result<Subspace, SubspaceError> {
    let ambient = check_ambient(s1, s2)?;
    let total = s1.dim() + s2.dim();
    if total == 0 {
        return Ok(Subspace::zero(ambient));
    }
    let mut stacked = Matrix::zeros(ambient, total);
    stacked.columns_mut(0, s1.dim()).copy_from(&s1.basis);
    stacked.columns_mut(s1.dim(), s2.dim()).copy_from(&s2.basis);
    Ok(image(&stacked, RANK_TOL))
}

/// Intersection `S₁ ∩ S₂`, computed as the joint kernel of the two
/// complementary projectors `I − Πᵢ` stacked on top of each other.
pub fn intersect(s1: &Subspace, s2: &Subspace) -> Result<Subspace, SubspaceError> {
    let ambient = check_ambient(s1, s2)?;
    let eye = Matrix::identity(ambient, ambient);
    let mut stacked = Matrix::zeros(2 * ambient, ambient);
    stacked
        .view_mut((0, 0), (ambient, ambient))
        .copy_from(&(&eye - s1.projector()));
    stacked
        .view_mut((ambient, 0), (ambient, ambient))
        .copy_from(&(&eye - s2.projector()));
    // Complementary projectors have unit natural scale; when both
    // subspaces are (numerically) the full space the stack is pure noise
    // and must rank as zero, so floor the scale at 1.
    Ok(kernel_with_floor(&stacked, RANK_TOL, 1.0))
}

/// Preimage `A⁻¹(S) = {x : Ax ∈ S}` for a square `A` (invertibility not
/// required), computed as `ker((I − Π_S)·A)`.
pub fn preimage(a: &Matrix, s: &Subspace) -> Result<Subspace, SubspaceError> {
    let n = s.ambient_dim();
    if a.nrows() != n || a.ncols() != n {
        return Err(SubspaceError::Shape(format!(
            "preimage needs a square {n}×{n} matrix, got {}×{}",
            a.nrows(),
            a.ncols()
        )));
    }
    // When S is the whole space the residual map is exactly zero in
    // theory but ~1e−16·‖A‖ noise in floats; flooring the rank decision
    // at the scale of A keeps the preimage full in that case.
    let residual_map = (Matrix::identity(n, n) - s.projector()) * a;
    Ok(kernel_with_floor(&residual_map, RANK_TOL, a.norm()))
}

/// Orthogonal projector onto a subspace (free-function form of
/// [`Subspace::projector`]).
pub fn projector(s: &Subspace) -> Matrix {
    s.projector()
}

/// Largest subspace `V ⊆ W` with `A·V ⊆ V + Σᵢ Im 𝒞ᵢ`, by the descending
/// fixed-point iteration `V₀ = W`, `V_{j+1} = V_j ∩ A⁻¹(V_j + Σᵢ Im 𝒞ᵢ)`.
/// Dimensions are non-increasing and integral, so the iteration reaches
/// its fixed point within `dim W ≤ N` steps.
pub fn largest_invariant_subspace(
    a: &Matrix,
    family: &[Matrix],
    w: &Subspace,
    rank_tol: f64,
) -> Result<Subspace, SubspaceError> {
    let n = w.ambient_dim();
    if a.nrows() != n || a.ncols() != n {
        return Err(SubspaceError::Shape(format!(
            "invariance map must be {n}×{n}, got {}×{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut image_sum = Subspace::zero(n);
    for (i, c) in family.iter().enumerate() {
        if c.nrows() != n {
            return Err(SubspaceError::Shape(format!(
                "family member {i} has {} rows, expected {n}",
                c.nrows()
            )));
        }
        image_sum = sum(&image_sum, &image(c, rank_tol))?;
    }
    let mut v = w.clone();
    for _ in 0..=n {
        let target = sum(&v, &image_sum)?;
        let next = intersect(&v, &preimage(a, &target)?)?;
        if next.dim() == v.dim() && next.approx_eq(&v) {
            return Ok(next);
        }
        v = next;
    }
    Ok(v)
}
