//! Training-time coupling of prior coordinates to data coordinates:
//! Gaussian prior sampling, centering, a distance-minimizing assignment of
//! prior atoms to data atoms, and rigid-body superposition, iterated twice.
//!
//! All functions here are pure given their RNG and operate on plain rows of
//! 3-vectors; nothing is differentiated through.

use rand::Rng;
use rand_distr::StandardNormal;

pub type Point3 = [f64; 3];
/// Rotation matrix applied to row vectors: `x' = x . R`.
pub type Rot3 = [[f64; 3]; 3];

/// Result of [`couple`]: `x0` is the prior sample after permutation and
/// rotation only, `x1` the centered target; `permutation[i]` is the index of
/// the original prior row now paired with target row `i`.
#[derive(Clone, Debug)]
pub struct CoupledPair {
    pub x0: Vec<Point3>,
    pub x1: Vec<Point3>,
    pub permutation: Vec<usize>,
}

pub fn centroid(points: &[Point3]) -> Point3 {
    let n = points.len().max(1) as f64;
    let mut c = [0.0; 3];
    for p in points {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    for a in 0..3 {
        c[a] /= n;
    }
    c
}

pub fn center(points: &mut [Point3]) {
    let c = centroid(points);
    for p in points.iter_mut() {
        for a in 0..3 {
            p[a] -= c[a];
        }
    }
}

/// `n` i.i.d. standard-normal 3-vectors.
pub fn sample_prior(n: usize, rng: &mut impl Rng) -> Vec<Point3> {
    assert!(n >= 1, "coupling::sample_prior: n must be >= 1");
    (0..n)
        .map(|_| {
            [
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            ]
        })
        .collect()
}

pub fn apply_rot(points: &[Point3], r: &Rot3) -> Vec<Point3> {
    points.iter().map(|p| rotate_point(p, r)).collect()
}

pub fn rotate_point(p: &Point3, r: &Rot3) -> Point3 {
    let mut out = [0.0; 3];
    for b in 0..3 {
        out[b] = p[0] * r[0][b] + p[1] * r[1][b] + p[2] * r[2][b];
    }
    out
}

pub fn sq_dist(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Total squared distance between paired rows.
pub fn pair_cost(p: &[Point3], q: &[Point3]) -> f64 {
    p.iter().zip(q).map(|(a, b)| sq_dist(a, b)).sum()
}

fn quat_to_rot_cols(q: [f64; 4]) -> [[f64; 3]; 3] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Uniform random proper rotation from a random unit quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> Rot3 {
    let mut q = [0.0; 4];
    loop {
        for v in q.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        let n = (q.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if n > 1e-6 {
            for v in q.iter_mut() {
                *v /= n;
            }
            break;
        }
    }
    // The column-convention matrix transposed gives the row-vector form.
    let m = quat_to_rot_cols(q);
    let mut r = [[0.0; 3]; 3];
    for (i, row) in r.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[j][i];
        }
    }
    r
}

/// Cyclic Jacobi eigensolver for a symmetric 4x4 matrix. Returns the
/// eigenvector of the largest eigenvalue.
fn max_eigvec_sym4(mut a: [[f64; 4]; 4]) -> [f64; 4] {
    let mut v = [[0.0; 4]; 4];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..60 {
        let mut off = 0.0;
        for p in 0..4 {
            for q in (p + 1)..4 {
                off += a[p][q] * a[p][q];
            }
        }
        if off < 1e-28 {
            break;
        }
        for p in 0..4 {
            for q in (p + 1)..4 {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..4 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..4 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..4 {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut best = 0;
    for i in 1..4 {
        if a[i][i] > a[best][best] {
            best = i;
        }
    }
    let mut out = [v[0][best], v[1][best], v[2][best], v[3][best]];
    let n = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in out.iter_mut() {
        *x /= n;
    }
    out
}

/// Optimal proper rotation `R` minimizing `sum_i ||p_i . R - q_i||^2` for
/// centered clouds, via the quaternion (Horn) formulation. Solving on the
/// quaternion double cover yields a proper rotation by construction, so the
/// reflective degenerate case of the SVD route cannot arise.
pub fn kabsch_rotate(p: &[Point3], q: &[Point3]) -> Rot3 {
    assert!(!p.is_empty(), "coupling::kabsch_rotate: empty input");
    assert_eq!(p.len(), q.len(), "coupling::kabsch_rotate: size mismatch {} vs {}", p.len(), q.len());
    // Correlation S[a][b] = sum_i p_i[a] q_i[b].
    let mut s = [[0.0; 3]; 3];
    for (pi, qi) in p.iter().zip(q) {
        for a in 0..3 {
            for b in 0..3 {
                s[a][b] += pi[a] * qi[b];
            }
        }
    }
    let (sxx, sxy, sxz) = (s[0][0], s[0][1], s[0][2]);
    let (syx, syy, syz) = (s[1][0], s[1][1], s[1][2]);
    let (szx, szy, szz) = (s[2][0], s[2][1], s[2][2]);
    let n = [
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ];
    let quat = max_eigvec_sym4(n);
    // Column-convention matrix rotates p onto q; row convention is its
    // transpose.
    let m = quat_to_rot_cols(quat);
    let mut r = [[0.0; 3]; 3];
    for (i, row) in r.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[j][i];
        }
    }
    r
}

/// Minimum-cost assignment on an `n x n` cost matrix (shortest augmenting
/// path, O(n^3)). Returns `row -> column`.
pub fn lap_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    assert!(n > 0 && cost.iter().all(|r| r.len() == n), "coupling::lap_min: cost must be square");
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut ans = vec![0; n];
    for j in 1..=n {
        ans[p[j] - 1] = j - 1;
    }
    ans
}

/// Permutation `sigma` minimizing `sum_i ||p[sigma(i)] - q[i]||^2`.
pub fn assign(p: &[Point3], q: &[Point3]) -> Vec<usize> {
    assert_eq!(p.len(), q.len(), "coupling::assign: size mismatch {} vs {}", p.len(), q.len());
    let n = p.len();
    let cost: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|j| sq_dist(&p[j], &q[i])).collect()).collect();
    lap_min(&cost)
}

const ALIGN_ROUNDS: usize = 2;

/// Center the target, draw and center a Gaussian prior, then alternate
/// assignment and rigid superposition. The squared-distance cost never
/// increases across rounds.
pub fn couple(x1_raw: &[Point3], rng: &mut impl Rng) -> CoupledPair {
    assert!(!x1_raw.is_empty(), "coupling::couple: empty target");
    let n = x1_raw.len();
    let mut x1 = x1_raw.to_vec();
    center(&mut x1);
    let mut x0 = sample_prior(n, rng);
    center(&mut x0);

    let mut perm: Vec<usize> = (0..n).collect();
    let mut prev_cost = pair_cost(&x0, &x1);
    for _ in 0..ALIGN_ROUNDS {
        let sigma = assign(&x0, &x1);
        let permuted: Vec<Point3> = sigma.iter().map(|&j| x0[j]).collect();
        let new_perm: Vec<usize> = sigma.iter().map(|&j| perm[j]).collect();
        let r = kabsch_rotate(&permuted, &x1);
        let rotated = apply_rot(&permuted, &r);
        let cost = pair_cost(&rotated, &x1);
        debug_assert!(cost <= prev_cost + 1e-9, "alignment increased cost: {prev_cost} -> {cost}");
        prev_cost = cost;
        x0 = rotated;
        perm = new_perm;
    }
    CoupledPair { x0, x1, permutation: perm }
}

/// RMSD after optimal rigid superposition (centering + rotation) of `p`
/// onto `q`.
pub fn aligned_rmsd(p: &[Point3], q: &[Point3]) -> f64 {
    assert_eq!(p.len(), q.len(), "coupling::aligned_rmsd: size mismatch");
    let mut pc = p.to_vec();
    let mut qc = q.to_vec();
    center(&mut pc);
    center(&mut qc);
    let r = kabsch_rotate(&pc, &qc);
    let pr = apply_rot(&pc, &r);
    (pair_cost(&pr, &qc) / p.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn random_cloud(n: usize, rng: &mut impl Rng) -> Vec<Point3> {
        sample_prior(n, rng).iter().map(|p| [p[0] * 2.0, p[1] * 2.0, p[2] * 2.0]).collect()
    }

    fn rot_error(a: &Rot3, b: &Rot3) -> f64 {
        let mut e: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                e = e.max((a[i][j] - b[i][j]).abs());
            }
        }
        e
    }

    fn det3(r: &Rot3) -> f64 {
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    #[test]
    fn prior_moments() {
        let mut rng = substream(1, "prior", 0);
        let pts = sample_prior(10_000, &mut rng);
        for axis in 0..3 {
            let mean = pts.iter().map(|p| p[axis]).sum::<f64>() / 10_000.0;
            let var = pts.iter().map(|p| p[axis] * p[axis]).sum::<f64>() / 10_000.0 - mean * mean;
            assert!(mean.abs() < 0.05, "axis {axis} mean {mean}");
            assert!((0.94..1.06).contains(&var), "axis {axis} var {var}");
        }
    }

    #[test]
    fn prior_shape_and_determinism() {
        let a = sample_prior(1, &mut substream(9, "p", 0));
        assert_eq!(a.len(), 1);
        let b = sample_prior(5, &mut substream(9, "p", 1));
        let c = sample_prior(5, &mut substream(9, "p", 1));
        assert_eq!(b, c);
    }

    #[test]
    fn kabsch_identity_on_equal_clouds() {
        let mut rng = substream(2, "k", 0);
        let mut p = random_cloud(6, &mut rng);
        center(&mut p);
        let r = kabsch_rotate(&p, &p);
        let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(rot_error(&r, &eye) < 1e-8, "{r:?}");
    }

    #[test]
    fn kabsch_recovers_known_rotation() {
        let mut rng = substream(3, "k", 1);
        for trial in 0..20 {
            let mut p = random_cloud(5, &mut rng);
            center(&mut p);
            let r0 = random_rotation(&mut rng);
            let q = apply_rot(&p, &r0);
            let r = kabsch_rotate(&p, &q);
            assert!(rot_error(&r, &r0) < 1e-8, "trial {trial}: {:?}", rot_error(&r, &r0));
        }
    }

    #[test]
    fn kabsch_beats_random_rotation_search_n3() {
        let mut rng = substream(4, "k", 2);
        for _ in 0..3 {
            let mut p = random_cloud(3, &mut rng);
            let mut q = random_cloud(3, &mut rng);
            center(&mut p);
            center(&mut q);
            let r = kabsch_rotate(&p, &q);
            let best = pair_cost(&apply_rot(&p, &r), &q);
            for _ in 0..100_000 {
                let rr = random_rotation(&mut rng);
                let c = pair_cost(&apply_rot(&p, &rr), &q);
                assert!(c >= best - 1e-9, "random rotation beat kabsch: {c} < {best}");
            }
        }
    }

    #[test]
    fn kabsch_always_proper_rotation() {
        let mut rng = substream(5, "k", 3);
        for n in [1usize, 2, 3, 8] {
            for _ in 0..20 {
                let mut p = random_cloud(n, &mut rng);
                let mut q = random_cloud(n, &mut rng);
                center(&mut p);
                center(&mut q);
                let r = kabsch_rotate(&p, &q);
                assert!((det3(&r) - 1.0).abs() < 1e-10, "det {}", det3(&r));
                // orthonormality
                for i in 0..3 {
                    for j in 0..3 {
                        let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                        let want = if i == j { 1.0 } else { 0.0 };
                        assert!((dot - want).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn kabsch_degenerate_collinear_is_proper() {
        // Collinear cloud: rank-deficient correlation.
        let p = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [-2.0, 0.0, 0.0]];
        let q = vec![[0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 2.0, 0.0], [0.0, -2.0, 0.0]];
        let r = kabsch_rotate(&p, &q);
        assert!((det3(&r) - 1.0).abs() < 1e-10);
        let cost = pair_cost(&apply_rot(&p, &r), &q);
        assert!(cost < 1e-18, "collinear alignment cost {cost}");
    }

    #[test]
    #[should_panic(expected = "empty input")]
    fn kabsch_rejects_empty() {
        kabsch_rotate(&[], &[]);
    }

    #[test]
    fn assign_identity_cost_on_equal() {
        let mut rng = substream(6, "a", 0);
        let p = random_cloud(5, &mut rng);
        let sigma = assign(&p, &p);
        let cost: f64 = (0..5).map(|i| sq_dist(&p[sigma[i]], &p[i])).sum();
        assert!(cost < 1e-18);
    }

    #[test]
    fn assign_reversal() {
        let p = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let q: Vec<Point3> = p.iter().rev().cloned().collect();
        let sigma = assign(&p, &q);
        assert_eq!(sigma, vec![2, 1, 0]);
    }

    fn exhaustive_min_cost(p: &[Point3], q: &[Point3]) -> f64 {
        fn permutations(n: usize) -> Vec<Vec<usize>> {
            if n == 1 {
                return vec![vec![0]];
            }
            let mut out = Vec::new();
            for perm in permutations(n - 1) {
                for pos in 0..n {
                    let mut p2 = perm.clone();
                    p2.insert(pos, n - 1);
                    out.push(p2);
                }
            }
            out
        }
        permutations(p.len())
            .into_iter()
            .map(|perm| (0..p.len()).map(|i| sq_dist(&p[perm[i]], &q[i])).sum())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn assign_matches_exhaustive_search() {
        let mut rng = substream(7, "a", 1);
        for trial in 0..100 {
            let n = rng.gen_range(1..=6);
            let p = random_cloud(n, &mut rng);
            let q = random_cloud(n, &mut rng);
            let sigma = assign(&p, &q);
            let got: f64 = (0..n).map(|i| sq_dist(&p[sigma[i]], &q[i])).sum();
            let want = exhaustive_min_cost(&p, &q);
            assert!((got - want).abs() < 1e-9, "trial {trial}: {got} vs {want}");
            // sigma is a bijection
            let mut seen = vec![false; n];
            for &s in &sigma {
                assert!(!seen[s]);
                seen[s] = true;
            }
        }
    }

    #[test]
    fn couple_beats_unaligned_prior() {
        let mut rng = substream(8, "c", 0);
        for _ in 0..20 {
            let x1 = random_cloud(7, &mut rng);
            let mut x1c = x1.clone();
            center(&mut x1c);
            let mut prior_rng = substream(8, "c-prior", 0);
            let mut raw = sample_prior(7, &mut prior_rng);
            center(&mut raw);
            let unaligned = pair_cost(&raw, &x1c);
            let pair = couple(&x1, &mut substream(8, "c-prior", 0));
            assert!(pair_cost(&pair.x0, &pair.x1) <= unaligned + 1e-12);
        }
    }

    #[test]
    fn two_rounds_no_worse_than_one() {
        // Replicate the pipeline with one round and compare.
        let mut rng = substream(9, "c", 1);
        for _ in 0..30 {
            let x1_raw = random_cloud(5, &mut rng);
            let mut x1 = x1_raw.clone();
            center(&mut x1);
            let mut x0 = sample_prior(5, &mut substream(9, "c-p", 0));
            center(&mut x0);
            let sigma = assign(&x0, &x1);
            let permuted: Vec<Point3> = sigma.iter().map(|&j| x0[j]).collect();
            let r = kabsch_rotate(&permuted, &x1);
            let one_round = pair_cost(&apply_rot(&permuted, &r), &x1);

            let pair = couple(&x1_raw, &mut substream(9, "c-p", 0));
            let two_round = pair_cost(&pair.x0, &pair.x1);
            assert!(two_round <= one_round + 1e-9, "{two_round} > {one_round}");
        }
    }

    #[test]
    fn couple_centers_target_and_preserves_prior_geometry() {
        let mut rng = substream(10, "c", 2);
        let x1 = random_cloud(6, &mut rng);
        let pair = couple(&x1, &mut substream(10, "c-p", 0));
        let c = centroid(&pair.x1);
        assert!(c.iter().all(|v| v.abs() < 1e-10), "{c:?}");
        // x0 equals the centered prior up to permutation and rotation:
        // pairwise distances of x0 match those of the permuted raw prior.
        let mut raw = sample_prior(6, &mut substream(10, "c-p", 0));
        center(&mut raw);
        for i in 0..6 {
            for j in 0..6 {
                let want = sq_dist(&raw[pair.permutation[i]], &raw[pair.permutation[j]]);
                let got = sq_dist(&pair.x0[i], &pair.x0[j]);
                assert!((want - got).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn coupling_cost_distribution_rotation_invariant() {
        // Rotating the raw target leaves the distribution of final costs
        // unchanged; compare means over paired trials.
        let mut rng = substream(11, "c", 3);
        let r0 = random_rotation(&mut rng);
        let trials = 200;
        let (mut mean_a, mut mean_b) = (0.0, 0.0);
        let mut diffs = Vec::new();
        for k in 0..trials {
            let x1 = random_cloud(6, &mut rng);
            let x1r = apply_rot(&x1, &r0);
            let a = couple(&x1, &mut substream(11, "cp", k));
            let b = couple(&x1r, &mut substream(11, "cp", k));
            let ca = pair_cost(&a.x0, &a.x1);
            let cb = pair_cost(&b.x0, &b.x1);
            mean_a += ca;
            mean_b += cb;
            diffs.push(ca - cb);
        }
        mean_a /= trials as f64;
        mean_b /= trials as f64;
        let diffs_mean = diffs.iter().sum::<f64>() / trials as f64;
        let diffs_var =
            diffs.iter().map(|d| (d - diffs_mean) * (d - diffs_mean)).sum::<f64>() / trials as f64;
        let se = (diffs_var / trials as f64).sqrt().max(1e-12);
        assert!(
            (mean_a - mean_b).abs() < 4.0 * se + 0.05 * mean_a.max(mean_b),
            "means {mean_a} vs {mean_b}, se {se}"
        );
    }
}
