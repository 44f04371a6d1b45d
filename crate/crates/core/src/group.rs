//! Finite symmetry groups, their integer matrix representations, and their
//! actions on pixel grids and typed vectors.
//!
//! Elements of `D_n` are stored as `r^k s^f` where `r` rotates the plane by
//! `2πk/n` and `s` is the reflection `m_x = diag(1, -1)` (it keeps `x` and
//! negates `y`). `D_2` uses the enumeration `{e, m_x, m_y, r180}`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Cyclic,
    Dihedral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupSpec {
    pub kind: GroupKind,
    /// `n` for `C_n` (n elements) or `D_n` (2n elements).
    pub order_parameter: usize,
}

const D2_TABLE: [(usize, bool); 4] = [(0, false), (0, true), (1, true), (1, false)];
const D2_NAMES: [&str; 4] = ["e", "m_x", "m_y", "r180"];

impl GroupSpec {
    pub fn cyclic(n: usize) -> Result<Self> {
        Self::new(GroupKind::Cyclic, n)
    }

    pub fn dihedral(n: usize) -> Result<Self> {
        Self::new(GroupKind::Dihedral, n)
    }

    pub fn new(kind: GroupKind, order_parameter: usize) -> Result<Self> {
        if order_parameter == 0 {
            return Err(Error::InvalidGroup("order parameter must be positive".into()));
        }
        Ok(Self {
            kind,
            order_parameter,
        })
    }

    /// The Klein four-group acting on the plane by the two axis reflections.
    pub fn d2() -> Self {
        Self {
            kind: GroupKind::Dihedral,
            order_parameter: 2,
        }
    }

    pub fn order(&self) -> usize {
        match self.kind {
            GroupKind::Cyclic => self.order_parameter,
            GroupKind::Dihedral => 2 * self.order_parameter,
        }
    }

    pub fn is_d2(&self) -> bool {
        *self == Self::d2()
    }

    /// Canonical enumeration, identity first.
    pub fn elements(&self) -> Vec<GroupElement> {
        (0..self.order())
            .map(|index| GroupElement { group: *self, index })
            .collect()
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement {
            group: *self,
            index: 0,
        }
    }

    pub fn element(&self, index: usize) -> Result<GroupElement> {
        if index >= self.order() {
            return Err(Error::InvalidGroup(format!(
                "element index {index} out of range for {self}"
            )));
        }
        Ok(GroupElement { group: *self, index })
    }

    pub fn element_by_name(&self, name: &str) -> Result<GroupElement> {
        self.elements()
            .into_iter()
            .find(|g| g.name() == name)
            .ok_or_else(|| Error::InvalidGroup(format!("no element named `{name}` in {self}")))
    }

    /// Rotation `r` and, for dihedral groups, reflection `s`.
    pub fn generators(&self) -> Vec<GroupElement> {
        let n = self.order_parameter;
        let mut gens = Vec::new();
        if n > 1 {
            gens.push(self.encode(1, false));
        }
        if self.kind == GroupKind::Dihedral {
            gens.push(self.encode(0, true));
        }
        if gens.is_empty() {
            gens.push(self.identity());
        }
        gens
    }

    fn decode(&self, index: usize) -> (usize, bool) {
        let n = self.order_parameter;
        match self.kind {
            GroupKind::Cyclic => (index, false),
            GroupKind::Dihedral if n == 2 => D2_TABLE[index],
            GroupKind::Dihedral => (index % n, index >= n),
        }
    }

    fn encode(&self, rotation: usize, flip: bool) -> GroupElement {
        let n = self.order_parameter;
        let rotation = rotation % n;
        let index = match self.kind {
            GroupKind::Cyclic => rotation,
            GroupKind::Dihedral if n == 2 => D2_TABLE
                .iter()
                .position(|&e| e == (rotation, flip))
                .expect("D2 table is complete"),
            GroupKind::Dihedral => rotation + if flip { n } else { 0 },
        };
        GroupElement { group: *self, index }
    }

    /// Exact 2x2 action on the plane, available when every element maps the
    /// square lattice onto itself (`n` in {1, 2, 4}).
    pub fn plane_matrix(&self, g: GroupElement) -> Option<[[i32; 2]; 2]> {
        let (k, flip) = self.decode(g.index);
        let n = self.order_parameter;
        let quarter_turns = match n {
            1 => 0,
            2 => 2 * k,
            4 => k,
            _ => return None,
        };
        let rot = match quarter_turns % 4 {
            0 => [[1, 0], [0, 1]],
            1 => [[0, -1], [1, 0]],
            2 => [[-1, 0], [0, -1]],
            _ => [[0, 1], [-1, 0]],
        };
        let refl = if flip { [[1, 0], [0, -1]] } else { [[1, 0], [0, 1]] };
        Some(mat2_mul(rot, refl))
    }
}

fn mat2_mul(a: [[i32; 2]; 2], b: [[i32; 2]; 2]) -> [[i32; 2]; 2] {
    let mut out = [[0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

impl fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            GroupKind::Cyclic => write!(f, "C{}", self.order_parameter),
            GroupKind::Dihedral => write!(f, "D{}", self.order_parameter),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GroupElement {
    pub group: GroupSpec,
    pub index: usize,
}

impl GroupElement {
    pub fn compose(&self, other: &GroupElement) -> Result<GroupElement> {
        if self.group != other.group {
            return Err(Error::GroupMismatch(
                self.group.to_string(),
                other.group.to_string(),
            ));
        }
        let group = self.group;
        let n = group.order_parameter;
        let (k1, f1) = group.decode(self.index);
        let (k2, f2) = group.decode(other.index);
        // r^k1 s^f1 r^k2 s^f2 = r^(k1 ± k2) s^(f1 xor f2)
        let k = if f1 { k1 + n - k2 } else { k1 + k2 };
        Ok(group.encode(k, f1 ^ f2))
    }

    pub fn inverse(&self) -> GroupElement {
        let group = self.group;
        let (k, flip) = group.decode(self.index);
        if flip {
            *self
        } else {
            group.encode(group.order_parameter - k, false)
        }
    }

    pub fn is_identity(&self) -> bool {
        self.index == 0
    }

    pub fn name(&self) -> String {
        if self.group.is_d2() {
            return D2_NAMES[self.index].to_string();
        }
        let (k, flip) = self.group.decode(self.index);
        match (k, flip) {
            (0, false) => "e".into(),
            (k, false) => format!("r{k}"),
            (0, true) => "s".into(),
            (k, true) => format!("r{k}s"),
        }
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Small dense integer matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i32>,
}

impl IntMatrix {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0; n * n];
        for i in 0..n {
            data[i * n + i] = 1;
        }
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn get(&self, r: usize, c: usize) -> i32 {
        self.data[r * self.cols + c]
    }

    pub fn matmul(&self, other: &IntMatrix) -> IntMatrix {
        assert_eq!(self.cols, other.rows);
        let mut data = vec![0; self.rows * other.cols];
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0 {
                    continue;
                }
                for j in 0..other.cols {
                    data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        IntMatrix {
            rows: self.rows,
            cols: other.cols,
            data,
        }
    }

    pub fn transpose(&self) -> IntMatrix {
        let mut data = vec![0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.get(i, j);
            }
        }
        IntMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn is_permutation(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|r| {
                let row = &self.data[r * self.cols..(r + 1) * self.cols];
                row.iter().filter(|&&v| v == 1).count() == 1 && row.iter().all(|&v| v == 0 || v == 1)
            })
            && (0..self.cols).all(|c| (0..self.rows).filter(|&r| self.get(r, c) == 1).count() == 1)
    }
}

/// One-dimensional real character given by its value on the generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Character {
    pub rotation: i8,
    pub reflection: i8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Irrep {
    Character(Character),
    /// The defining action on the plane.
    Natural,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RepKind {
    Trivial,
    Irrep(Irrep),
    Regular,
    DirectSum(Vec<Representation>),
    Tensor(Box<Representation>, Box<Representation>),
}

/// A homomorphism `G -> GL(d)` stored as one exact integer matrix per element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Representation {
    pub group: GroupSpec,
    pub kind: RepKind,
    pub dimension: usize,
    matrices: Arc<Vec<IntMatrix>>,
}

impl Representation {
    pub fn trivial(group: GroupSpec) -> Self {
        let matrices = group.elements().iter().map(|_| IntMatrix::identity(1)).collect();
        Self {
            group,
            kind: RepKind::Trivial,
            dimension: 1,
            matrices: Arc::new(matrices),
        }
    }

    /// Permutation action of `G` on itself by left multiplication:
    /// basis vector `e_h` is sent to `e_{gh}`.
    pub fn regular(group: GroupSpec) -> Self {
        let elems = group.elements();
        let n = elems.len();
        let matrices = elems
            .iter()
            .map(|g| {
                let mut m = IntMatrix {
                    rows: n,
                    cols: n,
                    data: vec![0; n * n],
                };
                for h in &elems {
                    let gh = g.compose(h).expect("same group");
                    m.data[gh.index * n + h.index] = 1;
                }
                m
            })
            .collect();
        Self {
            group,
            kind: RepKind::Regular,
            dimension: n,
            matrices: Arc::new(matrices),
        }
    }

    pub fn character(group: GroupSpec, ch: Character) -> Result<Self> {
        let valid = |v: i8| v == 1 || v == -1;
        if !valid(ch.rotation) || !valid(ch.reflection) {
            return Err(Error::InvalidGroup("character values must be ±1".into()));
        }
        if ch.rotation == -1 && group.order_parameter % 2 == 1 {
            return Err(Error::InvalidGroup(format!(
                "{group} has no character negating the rotation generator"
            )));
        }
        if ch.reflection == -1 && group.kind == GroupKind::Cyclic {
            return Err(Error::InvalidGroup(format!("{group} has no reflections")));
        }
        if ch.rotation == 1 && ch.reflection == 1 {
            return Ok(Self::trivial(group));
        }
        let matrices = group
            .elements()
            .iter()
            .map(|g| {
                let (k, flip) = group.decode(g.index);
                let mut v = if k % 2 == 1 { ch.rotation as i32 } else { 1 };
                if flip {
                    v *= ch.reflection as i32;
                }
                IntMatrix {
                    rows: 1,
                    cols: 1,
                    data: vec![v],
                }
            })
            .collect();
        Ok(Self {
            group,
            kind: RepKind::Irrep(Irrep::Character(ch)),
            dimension: 1,
            matrices: Arc::new(matrices),
        })
    }

    /// All one-dimensional real irreps, trivial first.
    pub fn characters(group: GroupSpec) -> Vec<Self> {
        let mut out = Vec::new();
        for rotation in [1i8, -1] {
            for reflection in [1i8, -1] {
                if let Ok(rep) = Self::character(group, Character { rotation, reflection }) {
                    out.push(rep);
                }
            }
        }
        out
    }

    pub fn natural(group: GroupSpec) -> Result<Self> {
        let matrices = group
            .elements()
            .iter()
            .map(|&g| {
                group.plane_matrix(g).map(|m| IntMatrix {
                    rows: 2,
                    cols: 2,
                    data: vec![m[0][0], m[0][1], m[1][0], m[1][1]],
                })
            })
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Unsupported(format!("{group} does not act on the square lattice")))?;
        Ok(Self {
            group,
            kind: RepKind::Irrep(Irrep::Natural),
            dimension: 2,
            matrices: Arc::new(matrices),
        })
    }

    /// Sign action on the x coordinate (`ρ_x`); requires every element to act
    /// diagonally on the plane.
    pub fn coord_x(group: GroupSpec) -> Result<Self> {
        Self::coordinate(group, 0)
    }

    /// Sign action on the y coordinate (`ρ_y`).
    pub fn coord_y(group: GroupSpec) -> Result<Self> {
        Self::coordinate(group, 1)
    }

    fn coordinate(group: GroupSpec, axis: usize) -> Result<Self> {
        let mut rotation = 1i8;
        let mut reflection = 1i8;
        for g in group.generators() {
            let m = group
                .plane_matrix(g)
                .ok_or_else(|| Error::Unsupported(format!("{group} does not act on the square lattice")))?;
            if m[0][1] != 0 || m[1][0] != 0 {
                return Err(Error::Unsupported(format!(
                    "{group} mixes the coordinate axes; no coordinate sign character"
                )));
            }
            let (_, flip) = group.decode(g.index);
            if flip {
                reflection = m[axis][axis] as i8;
            } else if !g.is_identity() {
                rotation = m[axis][axis] as i8;
            }
        }
        Self::character(group, Character { rotation, reflection })
    }

    pub fn direct_sum(parts: Vec<Representation>) -> Result<Self> {
        let first = parts
            .first()
            .ok_or(Error::Empty("direct sum needs at least one summand"))?;
        let group = first.group;
        if let Some(bad) = parts.iter().find(|p| p.group != group) {
            return Err(Error::GroupMismatch(group.to_string(), bad.group.to_string()));
        }
        let dimension: usize = parts.iter().map(|p| p.dimension).sum();
        let matrices = (0..group.order())
            .map(|gi| {
                let mut m = IntMatrix {
                    rows: dimension,
                    cols: dimension,
                    data: vec![0; dimension * dimension],
                };
                let mut offset = 0;
                for p in &parts {
                    let block = &p.matrices[gi];
                    for r in 0..p.dimension {
                        for c in 0..p.dimension {
                            m.data[(offset + r) * dimension + offset + c] = block.get(r, c);
                        }
                    }
                    offset += p.dimension;
                }
                m
            })
            .collect();
        Ok(Self {
            group,
            kind: RepKind::DirectSum(parts),
            dimension,
            matrices: Arc::new(matrices),
        })
    }

    /// `copies` copies of `self`.
    pub fn repeat(&self, copies: usize) -> Result<Self> {
        Self::direct_sum(vec![self.clone(); copies])
    }

    /// Kronecker product: index `(i, j)` maps to `i * b.dim + j`.
    pub fn tensor(a: &Representation, b: &Representation) -> Result<Self> {
        if a.group != b.group {
            return Err(Error::GroupMismatch(a.group.to_string(), b.group.to_string()));
        }
        let (da, db) = (a.dimension, b.dimension);
        let dimension = da * db;
        let matrices = (0..a.group.order())
            .map(|gi| {
                let (ma, mb) = (&a.matrices[gi], &b.matrices[gi]);
                let mut m = IntMatrix {
                    rows: dimension,
                    cols: dimension,
                    data: vec![0; dimension * dimension],
                };
                for i in 0..da {
                    for k in 0..da {
                        let x = ma.get(i, k);
                        if x == 0 {
                            continue;
                        }
                        for j in 0..db {
                            for l in 0..db {
                                m.data[(i * db + j) * dimension + k * db + l] = x * mb.get(j, l);
                            }
                        }
                    }
                }
                m
            })
            .collect();
        Ok(Self {
            group: a.group,
            kind: RepKind::Tensor(Box::new(a.clone()), Box::new(b.clone())),
            dimension,
            matrices: Arc::new(matrices),
        })
    }

    pub fn rep_matrix(&self, g: GroupElement) -> Result<&IntMatrix> {
        if g.group != self.group {
            return Err(Error::GroupMismatch(self.group.to_string(), g.group.to_string()));
        }
        Ok(&self.matrices[g.index])
    }

    /// `rep_matrix(g) · v`.
    pub fn act(&self, g: GroupElement, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dimension {
            return Err(Error::Shape(format!(
                "vector of length {} for a representation of dimension {}",
                v.len(),
                self.dimension
            )));
        }
        let m = self.rep_matrix(g)?;
        Ok((0..self.dimension)
            .map(|r| {
                (0..self.dimension)
                    .map(|c| m.get(r, c) as f64 * v[c])
                    .sum()
            })
            .collect())
    }

    /// Summands of a direct sum (a non-sum is its own single summand).
    pub fn summands(&self) -> Vec<&Representation> {
        match &self.kind {
            RepKind::DirectSum(parts) => parts.iter().flat_map(|p| p.summands()).collect(),
            _ => vec![self],
        }
    }

    /// True when every matrix is a permutation matrix.
    pub fn is_permutation(&self) -> bool {
        self.matrices.iter().all(IntMatrix::is_permutation)
    }

    /// Character vector (trace per element).
    pub fn character_vector(&self) -> Vec<i32> {
        self.matrices
            .iter()
            .map(|m| (0..m.rows).map(|i| m.get(i, i)).sum())
            .collect()
    }
}

/// Convenience alias used at call sites that only care about the sign
/// action of `D_2` on a coordinate.
pub fn act_typed_vector(rep: &Representation, g: GroupElement, v: &[f64]) -> Result<Vec<f64>> {
    rep.act(g, v)
}

/// Exact action of a lattice-compatible group on an `H x W` pixel grid.
///
/// Row `i` is the y axis and column `j` the x axis, both centred on the grid,
/// so `m_x` maps row `i` to `H - 1 - i`.
#[derive(Debug, Clone)]
pub struct SpatialAction {
    pub group: GroupSpec,
    pub height: usize,
    pub width: usize,
    /// `maps[g][src] = dst` pixel index.
    maps: Vec<Vec<usize>>,
    signs: Vec<[[i32; 2]; 2]>,
}

impl SpatialAction {
    pub fn new(group: GroupSpec, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape("grid dimensions must be positive".into()));
        }
        let mut maps = Vec::with_capacity(group.order());
        let mut signs = Vec::with_capacity(group.order());
        for g in group.elements() {
            let m = group
                .plane_matrix(g)
                .ok_or_else(|| Error::Unsupported(format!("{group} does not act on the square lattice")))?;
            if m[0][1] != 0 && height != width {
                return Err(Error::Shape(format!(
                    "{group} contains quarter turns; grid must be square, got {height}x{width}"
                )));
            }
            let (h, w) = (height as i64, width as i64);
            let mut map = vec![0; height * width];
            for i in 0..h {
                for j in 0..w {
                    // doubled centred coordinates keep everything integral
                    let x = 2 * j - (w - 1);
                    let y = 2 * i - (h - 1);
                    let x2 = m[0][0] as i64 * x + m[0][1] as i64 * y;
                    let y2 = m[1][0] as i64 * x + m[1][1] as i64 * y;
                    let j2 = (x2 + w - 1) / 2;
                    let i2 = (y2 + h - 1) / 2;
                    map[(i * w + j) as usize] = (i2 * w + j2) as usize;
                }
            }
            maps.push(map);
            signs.push(m);
        }
        Ok(Self {
            group,
            height,
            width,
            maps,
            signs,
        })
    }

    /// Destination pixel of every source pixel under `g`.
    pub fn pixel_map(&self, g: GroupElement) -> &[usize] {
        &self.maps[g.index]
    }

    pub fn plane_matrix(&self, g: GroupElement) -> [[i32; 2]; 2] {
        self.signs[g.index]
    }

    /// Maps grid cell `(row, col)` under `g`.
    pub fn map_cell(&self, g: GroupElement, row: usize, col: usize) -> (usize, usize) {
        let dst = self.maps[g.index][row * self.width + col];
        (dst / self.width, dst % self.width)
    }

    /// Permutes the pixels of a channel-major `C x H x W` image.
    pub fn act_image(&self, g: GroupElement, image: &[f64], channels: usize) -> Result<Vec<f64>> {
        if g.group != self.group {
            return Err(Error::GroupMismatch(self.group.to_string(), g.group.to_string()));
        }
        let plane = self.height * self.width;
        if image.len() != channels * plane {
            return Err(Error::Shape(format!(
                "image has {} values, expected {channels}x{}x{}",
                image.len(),
                self.height,
                self.width
            )));
        }
        let map = &self.maps[g.index];
        let mut out = vec![0.0; image.len()];
        for c in 0..channels {
            let src = &image[c * plane..(c + 1) * plane];
            let dst = &mut out[c * plane..(c + 1) * plane];
            for (p, &v) in src.iter().enumerate() {
                dst[map[p]] = v;
            }
        }
        Ok(out)
    }
}
