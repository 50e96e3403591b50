//! Fixed classifier weights taken from the vertices of regular polytopes.
//!
//! In every dimension `d` there are exactly three regular polytopes: the
//! d-simplex (`d + 1` vertices), the d-orthoplex (`2d` vertices) and the
//! d-cube (`2^d` vertices). Each generator below picks the smallest `d` that
//! holds `K` classes, emits `K` unit-norm vertices in a deterministic order,
//! and records the closed-form angle `phi` between a vertex and its nearest
//! neighbours.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default tolerance for geometric checks.
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolytopeKind {
    Simplex,
    Orthoplex,
    Cube,
}

impl PolytopeKind {
    pub const ALL: [PolytopeKind; 3] = [
        PolytopeKind::Simplex,
        PolytopeKind::Orthoplex,
        PolytopeKind::Cube,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolytopeKind::Simplex => "simplex",
            PolytopeKind::Orthoplex => "orthoplex",
            PolytopeKind::Cube => "cube",
        }
    }

    /// Number of vertices of the polytope in dimension `d`, saturating at
    /// `usize::MAX` for large cubes.
    pub fn vertex_budget(self, d: usize) -> usize {
        match self {
            PolytopeKind::Simplex => d + 1,
            PolytopeKind::Orthoplex => 2 * d,
            PolytopeKind::Cube => u32::try_from(d)
                .ok()
                .and_then(|d| 1usize.checked_shl(d))
                .unwrap_or(usize::MAX),
        }
    }
}

impl fmt::Display for PolytopeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolytopeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simplex" => Ok(PolytopeKind::Simplex),
            "orthoplex" => Ok(PolytopeKind::Orthoplex),
            "cube" => Ok(PolytopeKind::Cube),
            other => Err(Error::Config(format!(
                "unknown polytope kind {other:?} (expected simplex, orthoplex or cube)"
            ))),
        }
    }
}

/// A frozen `K x d` classifier: one unit-norm polytope vertex per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightsFile", into = "WeightsFile")]
pub struct ClassifierWeights {
    kind: PolytopeKind,
    rows: Array2<f64>,
    phi: f64,
}

impl ClassifierWeights {
    /// Builds weights from explicit rows, checking only the structural
    /// invariants (shape, finiteness, vertex budget). Use
    /// [`verify_geometry`] for the angular ones.
    pub fn from_rows(kind: PolytopeKind, rows: Array2<f64>) -> Result<Self> {
        let (k, d) = rows.dim();
        if k < 2 {
            return Err(Error::Structure(format!("{k} rows; need at least 2")));
        }
        if d == 0 {
            return Err(Error::Structure("zero-dimensional rows".into()));
        }
        if k > kind.vertex_budget(d) {
            return Err(Error::Structure(format!(
                "{k} rows exceed the {} vertex budget of a {d}-dimensional {kind}",
                kind.vertex_budget(d)
            )));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::Structure("non-finite entry".into()));
        }
        Ok(Self {
            kind,
            rows,
            phi: expected_angle(kind, d),
        })
    }

    pub fn kind(&self) -> PolytopeKind {
        self.kind
    }

    pub fn num_classes(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// Vertex angle of the polytope; also the maximal additive margin.
    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn row(&self, class: usize) -> ArrayView1<'_, f64> {
        self.rows.row(class)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// On-disk layout of [`ClassifierWeights`].
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    kind: PolytopeKind,
    #[serde(rename = "K")]
    num_classes: usize,
    d: usize,
    phi: f64,
    rows: Vec<Vec<f64>>,
}

impl From<ClassifierWeights> for WeightsFile {
    fn from(w: ClassifierWeights) -> Self {
        WeightsFile {
            kind: w.kind,
            num_classes: w.num_classes(),
            d: w.dim(),
            phi: w.phi,
            rows: w.rows.outer_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

impl TryFrom<WeightsFile> for ClassifierWeights {
    type Error = Error;

    fn try_from(file: WeightsFile) -> Result<Self> {
        if file.rows.len() != file.num_classes {
            return Err(Error::Structure(format!(
                "K = {} but {} rows present",
                file.num_classes,
                file.rows.len()
            )));
        }
        if let Some((i, r)) = file.rows.iter().enumerate().find(|(_, r)| r.len() != file.d) {
            return Err(Error::Structure(format!(
                "row {i} has length {}, expected d = {}",
                r.len(),
                file.d
            )));
        }
        let flat: Vec<f64> = file.rows.into_iter().flatten().collect();
        let rows = Array2::from_shape_vec((file.num_classes, file.d), flat)
            .map_err(|e| Error::Structure(e.to_string()))?;
        let w = ClassifierWeights::from_rows(file.kind, rows)?;
        if w.phi.to_bits() != file.phi.to_bits() {
            return Err(Error::Structure(format!(
                "phi {} does not match the closed form {} for a {}-dimensional {}",
                file.phi, w.phi, file.d, file.kind
            )));
        }
        Ok(w)
    }
}

/// Smallest feature dimension whose polytope has at least `classes` vertices.
pub fn embedding_dim(kind: PolytopeKind, classes: usize) -> Result<usize> {
    if classes < 2 {
        return Err(Error::InvalidClassCount(classes));
    }
    Ok(match kind {
        PolytopeKind::Simplex => classes - 1,
        PolytopeKind::Orthoplex => classes.div_ceil(2),
        // ceil(log2(K)) for K >= 2
        PolytopeKind::Cube => (usize::BITS - (classes - 1).leading_zeros()) as usize,
    })
}

/// Closed-form angle between a vertex and its nearest neighbours.
pub fn expected_angle(kind: PolytopeKind, d: usize) -> f64 {
    assert!(d >= 1, "polytope dimension must be positive");
    let d = d as f64;
    match kind {
        PolytopeKind::Simplex => (-1.0 / d).acos(),
        PolytopeKind::Orthoplex => FRAC_PI_2,
        PolytopeKind::Cube => ((d - 2.0) / d).acos(),
    }
}

pub fn make_weights(kind: PolytopeKind, classes: usize) -> Result<ClassifierWeights> {
    match kind {
        PolytopeKind::Simplex => make_simplex(classes),
        PolytopeKind::Orthoplex => make_orthoplex(classes),
        PolytopeKind::Cube => make_cube(classes),
    }
}

/// Regular simplex with `K` vertices in `K - 1` dimensions.
///
/// Starts from `{e_1, ..., e_d, alpha * sum(e_i)}` with
/// `alpha = (1 - sqrt(d + 1)) / d`, which places the extra vertex at the same
/// distance from every basis vector, then shifts the set to its centroid and
/// unit-normalizes each row.
pub fn make_simplex(classes: usize) -> Result<ClassifierWeights> {
    let d = embedding_dim(PolytopeKind::Simplex, classes)?;
    let df = d as f64;
    let alpha = (1.0 - (df + 1.0).sqrt()) / df;

    let mut rows = Array2::<f64>::zeros((classes, d));
    for i in 0..d {
        rows[[i, i]] = 1.0;
    }
    rows.row_mut(d).fill(alpha);

    let centroid = rows.mean_axis(Axis(0)).expect("non-empty vertex set");
    for mut row in rows.outer_iter_mut() {
        row -= &centroid;
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    ClassifierWeights::from_rows(PolytopeKind::Simplex, rows)
}

/// The first `K` of `+e_1, -e_1, +e_2, -e_2, ...` in `ceil(K / 2)` dimensions.
pub fn make_orthoplex(classes: usize) -> Result<ClassifierWeights> {
    let d = embedding_dim(PolytopeKind::Orthoplex, classes)?;
    let mut rows = Array2::<f64>::zeros((classes, d));
    for (i, mut row) in rows.outer_iter_mut().enumerate() {
        row[i / 2] = if i % 2 == 0 { 1.0 } else { -1.0 };
    }
    ClassifierWeights::from_rows(PolytopeKind::Orthoplex, rows)
}

/// The first `K` hypercube vertices `(+-1/sqrt(d))^d` in `ceil(log2 K)`
/// dimensions, in lexicographic order of sign vectors with `-` before `+`.
pub fn make_cube(classes: usize) -> Result<ClassifierWeights> {
    let d = embedding_dim(PolytopeKind::Cube, classes)?;
    let c = 1.0 / (d as f64).sqrt();
    let mut rows = Array2::<f64>::zeros((classes, d));
    for (i, mut row) in rows.outer_iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            let bit = (i >> (d - 1 - j)) & 1;
            *x = if bit == 1 { c } else { -c };
        }
    }
    ClassifierWeights::from_rows(PolytopeKind::Cube, rows)
}

/// Angle between two vectors, stable over the whole `[0, pi]` range.
///
/// Uses `2 * atan2(|a - b|, |a + b|)` on the normalized inputs; unlike
/// `acos(a . b)` this keeps full precision near `0` and `pi`.
pub fn angle_between(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    let mut diff = 0.0;
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let (x, y) = (x / na, y / nb);
        diff += (x - y) * (x - y);
        sum += (x + y) * (x + y);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometryCheck {
    pub passed: bool,
    /// Largest absolute deviation seen across all checked quantities.
    pub worst_deviation: f64,
    /// Smallest angle over all distinct row pairs.
    pub min_angle: f64,
    pub failures: Vec<String>,
}

/// Checks unit row norms, row distinctness, and that the nearest-neighbour
/// angle equals `phi`. For the simplex every pairwise angle must equal `phi`.
///
/// Orthoplex vertices are adjacent to every vertex except their antipode, so
/// for that kind the nearest-neighbour angle is taken over non-antipodal
/// pairs (all pairwise angles must be `phi` or `pi`). A 1-orthoplex has no
/// such pair and only the antipodal angle is checked.
pub fn verify_geometry(w: &ClassifierWeights, tol: f64) -> Result<GeometryCheck> {
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::Structure(format!("tolerance {tol} must be >= 0")));
    }
    let rows = w.rows();
    let (k, d) = rows.dim();
    if k != w.num_classes() || d != w.dim() || k < 2 {
        return Err(Error::Structure("shape does not match header".into()));
    }
    let phi = w.phi();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();

    for (i, row) in rows.outer_iter().enumerate() {
        let dev = (row.dot(&row).sqrt() - 1.0).abs();
        worst = worst.max(dev);
        if dev > tol {
            failures.push(format!("row {i} norm deviates from 1 by {dev:e}"));
        }
    }

    let mut min_angle = f64::INFINITY;
    let mut min_adjacent = f64::INFINITY;
    for i in 0..k {
        for j in i + 1..k {
            let a = angle_between(rows.row(i), rows.row(j));
            min_angle = min_angle.min(a);
            match w.kind() {
                PolytopeKind::Simplex => {
                    let dev = (a - phi).abs();
                    worst = worst.max(dev);
                    if dev > tol {
                        failures.push(format!("rows {i},{j} at angle {a}, expected {phi}"));
                    }
                }
                PolytopeKind::Orthoplex => {
                    let dev = (a - phi).abs().min((a - std::f64::consts::PI).abs());
                    worst = worst.max(dev);
                    if dev > tol {
                        failures.push(format!("rows {i},{j} at angle {a}, expected {phi} or pi"));
                    }
                    if (a - std::f64::consts::PI).abs() > tol {
                        min_adjacent = min_adjacent.min(a);
                    }
                }
                PolytopeKind::Cube => min_adjacent = min_adjacent.min(a),
            }
        }
    }

    if min_angle <= tol {
        failures.push(format!("duplicate rows (min angle {min_angle:e})"));
    }
    let nearest = match w.kind() {
        PolytopeKind::Simplex => Some(min_angle),
        _ if min_adjacent.is_finite() => Some(min_adjacent),
        _ => None,
    };
    if let Some(a) = nearest {
        let dev = (a - phi).abs();
        worst = worst.max(dev);
        if dev > tol {
            failures.push(format!("nearest-neighbour angle {a}, expected {phi}"));
        }
    }

    Ok(GeometryCheck {
        passed: failures.is_empty(),
        worst_deviation: worst,
        min_angle,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::f64::consts::PI;

    fn gram(w: &ClassifierWeights) -> Array2<f64> {
        w.rows().dot(&w.rows().t())
    }

    #[test]
    fn embedding_dims() {
        assert_eq!(embedding_dim(PolytopeKind::Simplex, 10).unwrap(), 9);
        assert_eq!(embedding_dim(PolytopeKind::Orthoplex, 10).unwrap(), 5);
        assert_eq!(embedding_dim(PolytopeKind::Cube, 10).unwrap(), 4);
        assert_eq!(embedding_dim(PolytopeKind::Cube, 47).unwrap(), 6);
        assert_eq!(embedding_dim(PolytopeKind::Cube, 2).unwrap(), 1);
        assert_eq!(embedding_dim(PolytopeKind::Cube, 64).unwrap(), 6);
        assert_eq!(embedding_dim(PolytopeKind::Cube, 65).unwrap(), 7);
        assert!(matches!(
            embedding_dim(PolytopeKind::Simplex, 1),
            Err(Error::InvalidClassCount(1))
        ));
    }

    #[test]
    fn simplex_ten_is_equiangular() {
        let w = make_simplex(10).unwrap();
        assert_eq!((w.num_classes(), w.dim()), (10, 9));
        let g = gram(&w);
        for i in 0..10 {
            for j in 0..10 {
                let want = if i == j { 1.0 } else { -1.0 / 9.0 };
                assert!((g[[i, j]] - want).abs() < 1e-12, "({i},{j}) = {}", g[[i, j]]);
            }
        }
    }

    #[test]
    fn simplex_two_is_antipodal() {
        let w = make_simplex(2).unwrap();
        assert_eq!(w.rows(), &array![[1.0], [-1.0]]);
        assert_eq!(w.phi(), PI);
    }

    #[test]
    fn tetrahedron_gram() {
        let w = make_simplex(4).unwrap();
        let g = gram(&w);
        let want = Array2::from_elem((4, 4), -1.0 / 3.0) + Array2::<f64>::eye(4) * (4.0 / 3.0);
        for (a, b) in g.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn orthoplex_selection_order() {
        let w = make_orthoplex(3).unwrap();
        assert_eq!(w.rows(), &array![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]);

        let w = make_orthoplex(10).unwrap();
        assert_eq!(w.dim(), 5);
        for v in gram(&w).iter() {
            assert!(*v == 0.0 || *v == -1.0 || *v == 1.0);
        }

        let g = gram(&make_orthoplex(4).unwrap());
        assert_eq!(
            g,
            array![
                [1.0, -1.0, 0.0, 0.0],
                [-1.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, -1.0],
                [0.0, 0.0, -1.0, 1.0]
            ]
        );
    }

    #[test]
    fn cube_vertices() {
        let w = make_cube(47).unwrap();
        assert_eq!((w.num_classes(), w.dim()), (47, 6));
        let c = 1.0 / 6f64.sqrt();
        assert!(w.rows().iter().all(|&x| x == c || x == -c));

        let s = 1.0 / 2f64.sqrt();
        let w = make_cube(4).unwrap();
        assert_eq!(w.rows(), &array![[-s, -s], [-s, s], [s, -s], [s, s]]);
        assert_eq!(w.phi(), FRAC_PI_2);

        let w = make_cube(8).unwrap();
        assert!((w.phi() - 1.230_959_417_340_774_7).abs() < 1e-12);
    }

    #[test]
    fn closed_form_angles() {
        assert!((expected_angle(PolytopeKind::Simplex, 9) - 1.682_137_341_135_860_4).abs() < 1e-12);
        assert_eq!(expected_angle(PolytopeKind::Orthoplex, 5), FRAC_PI_2);
        assert!((expected_angle(PolytopeKind::Cube, 6) - 0.841_068_670_567_930_1).abs() < 1e-12);
    }

    #[test]
    fn verify_accepts_generated_and_rejects_duplicates() {
        let r = verify_geometry(&make_simplex(10).unwrap(), 1e-10).unwrap();
        assert!(r.passed, "{:?}", r.failures);

        let r = verify_geometry(&make_orthoplex(6).unwrap(), 1e-10).unwrap();
        assert!(r.passed);
        assert!((r.min_angle - FRAC_PI_2).abs() < 1e-12);

        let mut rows = make_simplex(4).unwrap().rows().clone();
        let first = rows.row(0).to_owned();
        rows.row_mut(1).assign(&first);
        let w = ClassifierWeights::from_rows(PolytopeKind::Simplex, rows).unwrap();
        let r = verify_geometry(&w, 1e-10).unwrap();
        assert!(!r.passed);
        assert_eq!(r.min_angle, 0.0);
    }

    #[test]
    fn one_dimensional_orthoplex_passes() {
        let r = verify_geometry(&make_orthoplex(2).unwrap(), 1e-10).unwrap();
        assert!(r.passed, "{:?}", r.failures);
        assert_eq!(r.min_angle, PI);
    }

    #[test]
    fn from_rows_rejects_over_budget() {
        let rows = Array2::<f64>::zeros((4, 1));
        assert!(matches!(
            ClassifierWeights::from_rows(PolytopeKind::Orthoplex, rows),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn json_round_trip_is_exact() {
        for kind in PolytopeKind::ALL {
            let w = make_weights(kind, 13).unwrap();
            let text = w.to_json().unwrap();
            let back = ClassifierWeights::from_json(&text).unwrap();
            assert_eq!(w, back);
            for (a, b) in w.rows().iter().zip(back.rows().iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        let v: serde_json::Value = serde_json::from_str(&make_cube(5).unwrap().to_json().unwrap()).unwrap();
        assert_eq!(v["kind"], "cube");
        assert_eq!(v["K"], 5);
        assert_eq!(v["d"], 3);
    }

    #[test]
    fn json_rejects_wrong_phi() {
        let mut v: serde_json::Value =
            serde_json::from_str(&make_simplex(3).unwrap().to_json().unwrap()).unwrap();
        v["phi"] = serde_json::json!(1.0);
        assert!(ClassifierWeights::from_json(&v.to_string()).is_err());
    }
}
