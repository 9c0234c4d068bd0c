//! Marching cubes over a regular grid with linear edge interpolation.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{TriMesh, DEGENERATE_AREA};
use crate::math::Vec3;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    /// The cube `[-half, half]³`.
    pub fn cube(half: f64) -> Self {
        Aabb::new(Vec3::splat(-half), Vec3::splat(half))
    }

    pub fn expand(self, p: Vec3) -> Self {
        Aabb::new(self.min.component_min(p), self.max.component_max(p))
    }

    pub fn padded(self, pad: f64) -> Self {
        Aabb::new(self.min - Vec3::splat(pad), self.max + Vec3::splat(pad))
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Squared distance from `p` to the box (zero inside).
    pub fn distance_squared(&self, p: Vec3) -> f64 {
        let mut d = 0.0;
        for a in 0..3 {
            let v = if p[a] < self.min[a] {
                self.min[a] - p[a]
            } else if p[a] > self.max[a] {
                p[a] - self.max[a]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

/// Field values on the `(res+1)³` lattice spanning `bounds`, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub bounds: Aabb,
    /// Cells per axis.
    pub res: usize,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn points_per_axis(&self) -> usize {
        self.res + 1
    }

    pub fn cell_size(&self) -> Vec3 {
        self.bounds.extent() * (1.0 / self.res as f64)
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        lattice_point(&self.bounds, self.res, i, j, k)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let n = self.res + 1;
        (k * n + j) * n + i
    }

    /// Lattice points of z-slab `k` in storage order.
    pub fn slab_points(bounds: &Aabb, res: usize, k: usize) -> Vec<Vec3> {
        let n = res + 1;
        let mut pts = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                pts.push(lattice_point(bounds, res, i, j, k));
            }
        }
        pts
    }
}

#[inline]
fn lattice_point(b: &Aabb, res: usize, i: usize, j: usize, k: usize) -> Vec3 {
    let t = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * (i as f64 / res as f64);
    Vec3::new(t(b.min.x, b.max.x, i), t(b.min.y, b.max.y, j), t(b.min.z, b.max.z, k))
}

fn check_res(res: usize) -> Result<()> {
    if res < 8 {
        return Err(Error::invalid("marching cubes resolution must be at least 8"));
    }
    Ok(())
}

/// Samples a field slab by slab. `field` receives the points of one z-slab
/// and writes their values.
pub fn sample_grid<F>(bounds: Aabb, res: usize, mut field: F) -> Result<ScalarGrid>
where
    F: FnMut(&[Vec3], &mut [f64]) -> Result<()>,
{
    check_res(res)?;
    let n = res + 1;
    let mut values = vec![0.0; n * n * n];
    for k in 0..n {
        let pts = ScalarGrid::slab_points(&bounds, res, k);
        field(&pts, &mut values[k * n * n..(k + 1) * n * n])?;
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("sampled field"));
    }
    Ok(ScalarGrid {
        bounds,
        res,
        values,
    })
}

/// Samples a field exactly only near its zero set.
///
/// A grid `step` times coarser is evaluated first. Coarse cells with a corner
/// of absolute value below `band`, and their neighbours, have all their fine
/// lattice points evaluated; every other fine point takes the trilinear
/// interpolation of its coarse cell. For a field with unit gradient norm a
/// band of at least one coarse cell diagonal loses no surface. Falls back to
/// [`sample_grid`] when `step` does not divide `res`.
pub fn sample_grid_banded<F>(
    bounds: Aabb,
    res: usize,
    step: usize,
    band: f64,
    mut field: F,
) -> Result<ScalarGrid>
where
    F: FnMut(&[Vec3], &mut [f64]) -> Result<()>,
{
    check_res(res)?;
    if step <= 1 || !res.is_multiple_of(step) || res / step < 2 {
        return sample_grid(bounds, res, field);
    }
    let rc = res / step;
    let nc = rc + 1;
    let mut coarse = vec![0.0; nc * nc * nc];
    for k in 0..nc {
        let pts = ScalarGrid::slab_points(&bounds, rc, k);
        field(&pts, &mut coarse[k * nc * nc..(k + 1) * nc * nc])?;
    }
    let cv = |i: usize, j: usize, k: usize| coarse[(k * nc + j) * nc + i];
    let mut near = vec![false; rc * rc * rc];
    for k in 0..rc {
        for j in 0..rc {
            for i in 0..rc {
                let mut hit = false;
                for c in 0..8 {
                    let v = cv(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                    hit |= !(v.abs() >= band);
                }
                near[(k * rc + j) * rc + i] = hit;
            }
        }
    }
    let mut dilated = near.clone();
    for k in 0..rc {
        for j in 0..rc {
            for i in 0..rc {
                if !near[(k * rc + j) * rc + i] {
                    continue;
                }
                for dk in k.saturating_sub(1)..=(k + 1).min(rc - 1) {
                    for dj in j.saturating_sub(1)..=(j + 1).min(rc - 1) {
                        for di in i.saturating_sub(1)..=(i + 1).min(rc - 1) {
                            dilated[(dk * rc + dj) * rc + di] = true;
                        }
                    }
                }
            }
        }
    }
    let n = res + 1;
    let mut values = vec![0.0; n * n * n];
    let cell = |i: usize| ((i / step).min(rc - 1), (i as f64 - ((i / step).min(rc - 1) * step) as f64) / step as f64);
    let mut pts = Vec::new();
    let mut idx = Vec::new();
    let mut out = Vec::new();
    for k in 0..n {
        pts.clear();
        idx.clear();
        let (ck, tk) = cell(k);
        for j in 0..n {
            let (cj, tj) = cell(j);
            for i in 0..n {
                let (ci, ti) = cell(i);
                let flat = (k * n + j) * n + i;
                if dilated[(ck * rc + cj) * rc + ci] {
                    pts.push(lattice_point(&bounds, res, i, j, k));
                    idx.push(flat);
                } else {
                    let mut v = 0.0;
                    for c in 0..8 {
                        let (a, b, d) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
                        let w = if a == 1 { ti } else { 1.0 - ti }
                            * if b == 1 { tj } else { 1.0 - tj }
                            * if d == 1 { tk } else { 1.0 - tk };
                        v += w * cv(ci + a, cj + b, ck + d);
                    }
                    values[flat] = v;
                }
            }
        }
        if !pts.is_empty() {
            out.clear();
            out.resize(pts.len(), 0.0);
            field(&pts, &mut out)?;
            for (f, v) in idx.iter().zip(&out) {
                values[*f] = *v;
            }
        }
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("sampled field"));
    }
    Ok(ScalarGrid {
        bounds,
        res,
        values,
    })
}

/// Zero isosurface of `field` inside `bounds`, `res` cells per axis.
/// Negative values are inside; triangles wind counter-clockwise seen from
/// outside.
pub fn marching_cubes<F>(field: F, bounds: Aabb, res: usize) -> Result<TriMesh>
where
    F: FnMut(&[Vec3], &mut [f64]) -> Result<()>,
{
    marching_cubes_grid(&sample_grid(bounds, res, field)?)
}

/// Zero isosurface of a pre-sampled grid.
pub fn marching_cubes_grid(grid: &ScalarGrid) -> Result<TriMesh> {
    check_res(grid.res)?;
    let n = grid.res + 1;
    Error::check_len("grid values", n * n * n, grid.values.len())?;
    let v = &grid.values;
    let inside = |x: f64| x < 0.0;
    let first = inside(v[0]);
    if v.iter().all(|&x| inside(x) == first) {
        return Err(Error::EmptySurface);
    }

    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    // per (i, j) and z parity: vertex ids of the x, y and z edges starting there
    let mut slab = vec![[u32::MAX; 3]; n * n * 2];
    let sidx = |i: usize, j: usize, k: usize| (k % 2) * n * n + j * n + i;

    let mut edge = |slab: &mut Vec<[u32; 3]>, va: f64, vb: f64, axis: usize, i: usize, j: usize, k: usize| {
        if inside(va) == inside(vb) {
            return;
        }
        let t = va / (va - vb);
        let q = match axis {
            0 => grid.point(i + 1, j, k),
            1 => grid.point(i, j + 1, k),
            _ => grid.point(i, j, k + 1),
        };
        let p = grid.point(i, j, k).lerp(q, t);
        slab[sidx(i, j, k)][axis] = vertices.len() as u32;
        vertices.push(p);
    };

    let mut vs = [0.0f64; 8];
    let mut ids = [0u32; 12];
    for z in 0..n - 1 {
        for y in 0..n - 1 {
            for x in 0..n - 1 {
                vs[0] = v[grid.index(x, y, z)];
                vs[1] = v[grid.index(x + 1, y, z)];
                vs[2] = v[grid.index(x, y + 1, z)];
                vs[3] = v[grid.index(x + 1, y + 1, z)];
                vs[4] = v[grid.index(x, y, z + 1)];
                vs[5] = v[grid.index(x + 1, y, z + 1)];
                vs[6] = v[grid.index(x, y + 1, z + 1)];
                vs[7] = v[grid.index(x + 1, y + 1, z + 1)];
                let mut config = 0usize;
                for (b, val) in vs.iter().enumerate() {
                    if inside(*val) {
                        config |= 1 << b;
                    }
                }
                if config == 0 || config == 255 {
                    continue;
                }
                // x edges
                if y == 0 && z == 0 {
                    edge(&mut slab, vs[0], vs[1], 0, x, y, z);
                }
                if z == 0 {
                    edge(&mut slab, vs[2], vs[3], 0, x, y + 1, z);
                }
                if y == 0 {
                    edge(&mut slab, vs[4], vs[5], 0, x, y, z + 1);
                }
                edge(&mut slab, vs[6], vs[7], 0, x, y + 1, z + 1);
                // y edges
                if x == 0 && z == 0 {
                    edge(&mut slab, vs[0], vs[2], 1, x, y, z);
                }
                if z == 0 {
                    edge(&mut slab, vs[1], vs[3], 1, x + 1, y, z);
                }
                if x == 0 {
                    edge(&mut slab, vs[4], vs[6], 1, x, y, z + 1);
                }
                edge(&mut slab, vs[5], vs[7], 1, x + 1, y, z + 1);
                // z edges
                if x == 0 && y == 0 {
                    edge(&mut slab, vs[0], vs[4], 2, x, y, z);
                }
                if y == 0 {
                    edge(&mut slab, vs[1], vs[5], 2, x + 1, y, z);
                }
                if x == 0 {
                    edge(&mut slab, vs[2], vs[6], 2, x, y + 1, z);
                }
                edge(&mut slab, vs[3], vs[7], 2, x + 1, y + 1, z);

                ids[0] = slab[sidx(x, y, z)][0];
                ids[1] = slab[sidx(x, y + 1, z)][0];
                ids[2] = slab[sidx(x, y, z + 1)][0];
                ids[3] = slab[sidx(x, y + 1, z + 1)][0];
                ids[4] = slab[sidx(x, y, z)][1];
                ids[5] = slab[sidx(x + 1, y, z)][1];
                ids[6] = slab[sidx(x, y, z + 1)][1];
                ids[7] = slab[sidx(x + 1, y, z + 1)][1];
                ids[8] = slab[sidx(x, y, z)][2];
                ids[9] = slab[sidx(x + 1, y, z)][2];
                ids[10] = slab[sidx(x, y + 1, z)][2];
                ids[11] = slab[sidx(x + 1, y + 1, z)][2];

                let code = MC_TRIS[config];
                let n_tris = (code & 0xF) as usize;
                let mut shift = 4;
                for _ in 0..n_tris {
                    let mut tri = [0u32; 3];
                    for t in tri.iter_mut() {
                        *t = ids[((code >> shift) & 0xF) as usize];
                        shift += 4;
                    }
                    faces.push(tri);
                }
            }
        }
    }
    let mut mesh = TriMesh::new(vertices, faces);
    mesh.remove_degenerate(DEGENERATE_AREA);
    if mesh.is_empty() {
        return Err(Error::EmptySurface);
    }
    Ok(mesh)
}

// Triangle table from MarchingCubeCpp (public domain). Bits [3:0] hold the
// triangle count, then 4 bits per edge index.
#[rustfmt::skip]
static MC_TRIS: [u64; 256] = [
    0, 33793, 36945, 159668546,
    18961, 144771090, 5851666, 595283255635,
    20913, 67640146, 193993474, 655980856339,
    88782242, 736732689667, 797430812739, 194554754,
    26657, 104867330, 136709522, 298069416227,
    109224258, 8877909667, 318136408323, 1567994331701604,
    189884450, 350847647843, 559958167731, 3256298596865604,
    447393122899, 651646838401572, 2538311371089956, 737032694307,
    29329, 43484162, 91358498, 374810899075,
    158485010, 178117478419, 88675058979, 433581536604804,
    158486962, 649105605635, 4866906995, 3220959471609924,
    649165714851, 3184943915608436, 570691368417972, 595804498035,
    124295042, 431498018963, 508238522371, 91518530,
    318240155763, 291789778348404, 1830001131721892, 375363605923,
    777781811075, 1136111028516116, 3097834205243396, 508001629971,
    2663607373704004, 680242583802939237, 333380770766129845, 179746658,
    42545, 138437538, 93365810, 713842853011,
    73602098, 69575510115, 23964357683, 868078761575828,
    28681778, 713778574611, 250912709379, 2323825233181284,
    302080811955, 3184439127991172, 1694042660682596, 796909779811,
    176306722, 150327278147, 619854856867, 1005252473234484,
    211025400963, 36712706, 360743481544788, 150627258963,
    117482600995, 1024968212107700, 2535169275963444, 4734473194086550421,
    628107696687956, 9399128243, 5198438490361643573, 194220594,
    104474994, 566996932387, 427920028243, 2014821863433780,
    492093858627, 147361150235284, 2005882975110676, 9671606099636618005,
    777701008947, 3185463219618820, 482784926917540, 2900953068249785909,
    1754182023747364, 4274848857537943333, 13198752741767688709, 2015093490989156,
    591272318771, 2659758091419812, 1531044293118596, 298306479155,
    408509245114388, 210504348563, 9248164405801223541, 91321106,
    2660352816454484, 680170263324308757, 8333659837799955077, 482966828984116,
    4274926723105633605, 3184439197724820, 192104450, 15217,
    45937, 129205250, 129208402, 529245952323,
    169097138, 770695537027, 382310500883, 2838550742137652,
    122763026, 277045793139, 81608128403, 1991870397907988,
    362778151475, 2059003085103236, 2132572377842852, 655681091891,
    58419234, 239280858627, 529092143139, 1568257451898804,
    447235128115, 679678845236084, 2167161349491220, 1554184567314086709,
    165479003923, 1428768988226596, 977710670185060, 10550024711307499077,
    1305410032576132, 11779770265620358997, 333446212255967269, 978168444447012,
    162736434, 35596216627, 138295313843, 891861543990356,
    692616541075, 3151866750863876, 100103641866564, 6572336607016932133,
    215036012883, 726936420696196, 52433666, 82160664963,
    2588613720361524, 5802089162353039525, 214799000387, 144876322,
    668013605731, 110616894681956, 1601657732871812, 430945547955,
    3156382366321172, 7644494644932993285, 3928124806469601813, 3155990846772900,
    339991010498708, 10743689387941597493, 5103845475, 105070898,
    3928064910068824213, 156265010, 1305138421793636, 27185,
    195459938, 567044449971, 382447549283, 2175279159592324,
    443529919251, 195059004769796, 2165424908404116, 1554158691063110021,
    504228368803, 1436350466655236, 27584723588724, 1900945754488837749,
    122971970, 443829749251, 302601798803, 108558722,
    724700725875, 43570095105972, 2295263717447940, 2860446751369014181,
    2165106202149444, 69275726195, 2860543885641537797, 2165106320445780,
    2280890014640004, 11820349930268368933, 8721082628082003989, 127050770,
    503707084675, 122834978, 2538193642857604, 10129,
    801441490467, 2923200302876740, 1443359556281892, 2901063790822564949,
    2728339631923524, 7103874718248233397, 12775311047932294245, 95520290,
    2623783208098404, 1900908618382410757, 137742672547, 2323440239468964,
    362478212387, 727199575803140, 73425410, 34337,
    163101314, 668566030659, 801204361987, 73030562,
    591509145619, 162574594, 100608342969108, 5553,
    724147968595, 1436604830452292, 176259090, 42001,
    143955266, 2385, 18433, 0,
];
