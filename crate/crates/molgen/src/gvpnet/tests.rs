use super::*;
use crate::coupling::{apply_rot, random_rotation, Rot3};
use crate::molgraph::generate_toy_dataset;
use crate::numkit::check::{central_diff, max_rel_err};
use crate::paths::{build_path_sample_at, PathSpecs};
use crate::rng::substream;
use rand::Rng;
use rand_distr::StandardNormal;

fn randn(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn single_gvp(tape: &mut Tape, spec: &GvpSpec, seed: u64) -> GvpParams {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let width = spec.hidden_v + spec.cross;
    GvpParams {
        w_h: {
            let d = randn(&mut rng, spec.in_v * spec.hidden_v);
            tape.leaf(d, &[spec.in_v, spec.hidden_v])
        },
        w_ca: {
            let d = randn(&mut rng, spec.hidden_v * spec.cross.max(1));
            tape.leaf(d, &[spec.hidden_v, spec.cross.max(1)])
        },
        w_cb: {
            let d = randn(&mut rng, spec.hidden_v * spec.cross.max(1));
            tape.leaf(d, &[spec.hidden_v, spec.cross.max(1)])
        },
        w_m: {
            let d = randn(&mut rng, (spec.in_s + width) * spec.s_mid());
            tape.leaf(d, &[spec.in_s + width, spec.s_mid()])
        },
        b_m: {
            let d = randn(&mut rng, spec.s_mid());
            tape.leaf(d, &[1, spec.s_mid()])
        },
        w_mu: {
            let d = randn(&mut rng, width * spec.out_v.max(1));
            tape.leaf(d, &[width, spec.out_v.max(1)])
        },
        w_g: {
            let d = randn(&mut rng, spec.s_mid() * spec.out_v.max(1));
            tape.leaf(d, &[spec.s_mid(), spec.out_v.max(1)])
        },
        b_g: {
            let d = randn(&mut rng, spec.out_v.max(1));
            tape.leaf(d, &[1, spec.out_v.max(1)])
        },
    }
}

/// Apply a rotation to vector features stored as xyz component tensors
/// (row-vector convention): out_b = sum_a v_a R[a][b].
fn rotate_feat(vx: &[f64], vy: &[f64], vz: &[f64], r: &Rot3) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = vx.len();
    let mut ox = vec![0.0; n];
    let mut oy = vec![0.0; n];
    let mut oz = vec![0.0; n];
    for k in 0..n {
        ox[k] = vx[k] * r[0][0] + vy[k] * r[1][0] + vz[k] * r[2][0];
        oy[k] = vx[k] * r[0][1] + vy[k] * r[1][1] + vz[k] * r[2][1];
        oz[k] = vx[k] * r[0][2] + vy[k] * r[1][2] + vz[k] * r[2][2];
    }
    (ox, oy, oz)
}

fn spec_for_tests(cross: usize) -> GvpSpec {
    GvpSpec {
        in_s: 5,
        in_v: 6,
        out_s: 7,
        out_v: 4,
        hidden_v: 6,
        cross,
        scalar_act: true,
        sigmoid_gate: true,
    }
}

fn run_gvp(
    s_data: &[f64],
    v_data: &(Vec<f64>, Vec<f64>, Vec<f64>),
    rows: usize,
    spec: &GvpSpec,
) -> (Vec<f64>, (Vec<f64>, Vec<f64>, Vec<f64>)) {
    let mut tape = Tape::new();
    let p = single_gvp(&mut tape, spec, 77);
    let s = tape.constant(s_data.to_vec(), &[rows, spec.in_s]);
    let v = VecFeat {
        x: tape.constant(v_data.0.clone(), &[rows, spec.in_v]),
        y: tape.constant(v_data.1.clone(), &[rows, spec.in_v]),
        z: tape.constant(v_data.2.clone(), &[rows, spec.in_v]),
    };
    let (so, vo) = gvp_forward(&mut tape, &p, spec, s, &v);
    let vo = vo.unwrap();
    (
        tape.value(so).to_vec(),
        (tape.value(vo.x).to_vec(), tape.value(vo.y).to_vec(), tape.value(vo.z).to_vec()),
    )
}

#[test]
fn gvp_zero_vectors_stay_zero() {
    let spec = spec_for_tests(3);
    let mut rng = substream(1, "gvp", 0);
    let rows = 4;
    let s = randn(&mut rng, rows * spec.in_s);
    let zeros = vec![0.0; rows * spec.in_v];
    let (_, (vx, vy, vz)) = run_gvp(&s, &(zeros.clone(), zeros.clone(), zeros), rows, &spec);
    assert!(vx.iter().chain(&vy).chain(&vz).all(|&v| v == 0.0));
}

#[test]
fn gvp_rotation_equivariance() {
    let spec = spec_for_tests(3);
    let mut rng = substream(2, "gvp", 1);
    let rows = 5;
    let s = randn(&mut rng, rows * spec.in_s);
    let v = (
        randn(&mut rng, rows * spec.in_v),
        randn(&mut rng, rows * spec.in_v),
        randn(&mut rng, rows * spec.in_v),
    );
    let r = random_rotation(&mut rng);

    let (s_base, v_base) = run_gvp(&s, &v, rows, &spec);
    let v_rot_in = rotate_feat(&v.0, &v.1, &v.2, &r);
    let (s_rot, v_rot_out) = run_gvp(&s, &v_rot_in, rows, &spec);

    let expect = rotate_feat(&v_base.0, &v_base.1, &v_base.2, &r);
    for (got, want) in s_rot.iter().zip(&s_base) {
        assert!((got - want).abs() < 1e-9, "scalar not invariant: {got} vs {want}");
    }
    for (got, want) in v_rot_out
        .0
        .iter()
        .chain(&v_rot_out.1)
        .chain(&v_rot_out.2)
        .zip(expect.0.iter().chain(&expect.1).chain(&expect.2))
    {
        assert!((got - want).abs() < 1e-9, "vector not equivariant: {got} vs {want}");
    }
}

#[test]
fn gvp_reflection_breaks_with_cross_only() {
    let mut rng = substream(3, "gvp", 2);
    let rows = 5;
    for (cross, should_break) in [(3usize, true), (0usize, false)] {
        let spec = spec_for_tests(cross);
        let s = randn(&mut rng, rows * spec.in_s);
        let v = (
            randn(&mut rng, rows * spec.in_v),
            randn(&mut rng, rows * spec.in_v),
            randn(&mut rng, rows * spec.in_v),
        );
        let (_, v_base) = run_gvp(&s, &v, rows, &spec);
        // mirror: negate the x components
        let vm = (v.0.iter().map(|x| -x).collect::<Vec<_>>(), v.1.clone(), v.2.clone());
        let (_, v_mirror) = run_gvp(&s, &vm, rows, &spec);
        let expect = (v_base.0.iter().map(|x| -x).collect::<Vec<_>>(), v_base.1, v_base.2);
        let dev = v_mirror
            .0
            .iter()
            .chain(&v_mirror.1)
            .chain(&v_mirror.2)
            .zip(expect.0.iter().chain(&expect.1).chain(&expect.2))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        if should_break {
            assert!(dev > 1e-6, "cross branch should break reflection, dev {dev}");
        } else {
            assert!(dev < 1e-12, "plain gvp should be reflection-equivariant, dev {dev}");
        }
    }
}

fn test_molecule(seed: u64, t: f64) -> MolGraph {
    let g = generate_toy_dataset(1, seed, (5, 8)).unwrap().remove(0);
    let vocabs = Vocabs::standard();
    let specs = PathSpecs::default();
    let mut rng = substream(seed, "state", 0);
    build_path_sample_at(&g, t, &vocabs, &specs, &mut rng).g_t
}

fn rotate_graph(g: &MolGraph, r: &Rot3, shift: &Point3) -> MolGraph {
    let mut out = g.clone();
    out.x = apply_rot(&g.x, r);
    for p in out.x.iter_mut() {
        for a in 0..3 {
            p[a] += shift[a];
        }
    }
    out
}

fn rotate_pred(p: &Prediction, r: &Rot3, shift: &Point3) -> Prediction {
    let mut out = p.clone();
    out.xhat = apply_rot(&p.xhat, r);
    for q in out.xhat.iter_mut() {
        for a in 0..3 {
            q[a] += shift[a];
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn denoise_is_identity_on_positions_at_init() {
    let cfg = NetConfig::default();
    let store = init_params(&cfg, 5);
    let g = test_molecule(21, 0.4);
    let pred = denoise(&store, &cfg, &g, 0.4, None);
    for (a, b) in pred.xhat.iter().zip(&g.x) {
        for k in 0..3 {
            assert_eq!(a[k], b[k], "zero-initialized position update moved an atom");
        }
    }
}

#[test]
fn denoise_se3_equivariance() {
    let cfg = NetConfig::tiny();
    let store = init_params(&cfg, 6);
    let mut rng = substream(4, "se3", 0);
    for trial in 0..6 {
        let t = 0.1 + 0.15 * trial as f64;
        let g = test_molecule(100 + trial as u64, t);
        let prev = if trial % 2 == 0 {
            Some(denoise(&store, &cfg, &g, t, None))
        } else {
            None
        };
        let r = random_rotation(&mut rng);
        let shift = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let g_rot = rotate_graph(&g, &r, &shift);
        let prev_rot = prev.as_ref().map(|p| rotate_pred(p, &r, &shift));

        let base = denoise(&store, &cfg, &g, t, prev.as_ref());
        let rot = denoise(&store, &cfg, &g_rot, t, prev_rot.as_ref());

        let expect = rotate_pred(&base, &r, &shift);
        for (a, b) in rot.xhat.iter().zip(&expect.xhat) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-8, "xhat not equivariant: {} vs {}", a[k], b[k]);
            }
        }
        assert!(max_abs_diff(&rot.atom_logits, &base.atom_logits) < 1e-8);
        assert!(max_abs_diff(&rot.charge_logits, &base.charge_logits) < 1e-8);
        assert!(max_abs_diff(&rot.bond_logits, &base.bond_logits) < 1e-8);
    }
}

#[test]
fn denoise_permutation_equivariance() {
    let cfg = NetConfig::tiny();
    let store = init_params(&cfg, 7);
    let t = 0.45;
    let g = test_molecule(200, t);
    let n = g.n();
    let mut rng = substream(5, "perm", 0);
    // random permutation
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    let mut gp = MolGraph::new(n);
    for i in 0..n {
        gp.x[i] = g.x[perm[i]];
        gp.atoms[i] = g.atoms[perm[i]];
        gp.charges[i] = g.charges[perm[i]];
    }
    for i in 0..n {
        for j in 0..n {
            gp.bonds[i * n + j] = g.bonds[perm[i] * n + perm[j]];
        }
    }
    let base = denoise(&store, &cfg, &g, t, None);
    let permuted = denoise(&store, &cfg, &gp, t, None);
    let (ac, cc, bc) = (cfg.atom_classes(), cfg.charge_classes(), cfg.bond_classes());
    for i in 0..n {
        for k in 0..3 {
            assert!((permuted.xhat[i][k] - base.xhat[perm[i]][k]).abs() < 1e-9);
        }
        for k in 0..ac {
            assert!(
                (permuted.atom_logits[i * ac + k] - base.atom_logits[perm[i] * ac + k]).abs() < 1e-9
            );
        }
        for k in 0..cc {
            assert!(
                (permuted.charge_logits[i * cc + k] - base.charge_logits[perm[i] * cc + k]).abs()
                    < 1e-9
            );
        }
        for j in 0..n {
            for k in 0..bc {
                let got = permuted.bond_logits[(i * n + j) * bc + k];
                let want = base.bond_logits[(perm[i] * n + perm[j]) * bc + k];
                assert!((got - want).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn bond_logits_are_symmetric() {
    let cfg = NetConfig::tiny();
    let store = init_params(&cfg, 8);
    let g = test_molecule(300, 0.6);
    let n = g.n();
    let bc = cfg.bond_classes();
    let pred = denoise(&store, &cfg, &g, 0.6, None);
    for i in 0..n {
        for j in 0..n {
            for k in 0..bc {
                let a = pred.bond_logits[(i * n + j) * bc + k];
                let b = pred.bond_logits[(j * n + i) * bc + k];
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn denoise_reflection_breaking_probe() {
    // Perturb the parameters away from the zero-initialized position gates,
    // then look for a molecule where mirroring the input does not mirror the
    // output. Rotation equivariance must still hold for the same parameters.
    let cfg = NetConfig::tiny();
    let mut store = init_params(&cfg, 9);
    let mut prng = substream(6, "perturb", 0);
    for i in 0..store.len() {
        if !store.is_trainable(i) {
            continue;
        }
        let vals = store.values_mut(i);
        for v in vals.iter_mut() {
            *v += 0.25 * prng.sample::<f64, _>(StandardNormal);
        }
    }
    let t = 0.5;
    let mut best_dev: f64 = 0.0;
    for trial in 0..10 {
        let g = test_molecule(400 + trial, t);
        let mut gm = g.clone();
        for p in gm.x.iter_mut() {
            p[0] = -p[0];
        }
        let base = denoise(&store, &cfg, &g, t, None);
        let mirrored = denoise(&store, &cfg, &gm, t, None);
        let mut expect = base.clone();
        for p in expect.xhat.iter_mut() {
            p[0] = -p[0];
        }
        let dev_x = mirrored
            .xhat
            .iter()
            .zip(&expect.xhat)
            .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs()))
            .fold(0.0_f64, f64::max);
        let dev_l = max_abs_diff(&mirrored.atom_logits, &base.atom_logits);
        best_dev = best_dev.max(dev_x).max(dev_l);
    }
    assert!(best_dev > 1e-6, "reflection probe found no chirality sensitivity: {best_dev}");

    // control: rotations still fine after the perturbation
    let g = test_molecule(411, t);
    let mut rng = substream(7, "ctrl", 0);
    let r = random_rotation(&mut rng);
    let base = denoise(&store, &cfg, &g, t, None);
    let rot = denoise(&store, &cfg, &rotate_graph(&g, &r, &[0.0; 3]), t, None);
    let expect = rotate_pred(&base, &r, &[0.0; 3]);
    for (a, b) in rot.xhat.iter().zip(&expect.xhat) {
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-8);
        }
    }
}

#[test]
fn zeroed_selfcond_module_matches_unconditioned() {
    let cfg = NetConfig::tiny();
    let mut store = init_params(&cfg, 10);
    for name in ["selfcond.node.w", "selfcond.node.b", "selfcond.edge.w", "selfcond.edge.b"] {
        let len = store.get(name).len();
        store.set(name, vec![0.0; len]);
    }
    let g = test_molecule(500, 0.7);
    let prev = denoise(&store, &cfg, &g, 0.7, None);
    let with_prev = denoise(&store, &cfg, &g, 0.7, Some(&prev));
    let without = denoise(&store, &cfg, &g, 0.7, None);
    assert_eq!(with_prev.atom_logits, without.atom_logits);
    assert_eq!(with_prev.xhat, without.xhat);
}

#[test]
fn selfcond_residual_is_rotation_invariant() {
    // The self-conditioning inputs are distances and probabilities, so
    // jointly rotating the state and the previous prediction must leave
    // logits bit-comparable within fp tolerance.
    let cfg = NetConfig::tiny();
    let store = init_params(&cfg, 11);
    let g = test_molecule(600, 0.8);
    let prev = denoise(&store, &cfg, &g, 0.8, None);
    let mut rng = substream(8, "scrot", 0);
    let r = random_rotation(&mut rng);
    let g_rot = rotate_graph(&g, &r, &[0.0; 3]);
    let prev_rot = rotate_pred(&prev, &r, &[0.0; 3]);
    let base = denoise(&store, &cfg, &g, 0.8, Some(&prev));
    let rot = denoise(&store, &cfg, &g_rot, 0.8, Some(&prev_rot));
    assert!(max_abs_diff(&rot.atom_logits, &base.atom_logits) < 1e-9);
    assert!(max_abs_diff(&rot.bond_logits, &base.bond_logits) < 1e-9);
}

#[test]
#[should_panic(expected = "contract error")]
fn denoise_rejects_out_of_range_tokens() {
    let cfg = NetConfig::tiny();
    let store = init_params(&cfg, 12);
    let mut g = test_molecule(700, 0.5);
    g.atoms[0] = 99;
    denoise(&store, &cfg, &g, 0.5, None);
}

#[test]
fn single_atom_molecule_runs() {
    let cfg = NetConfig::tiny();
    let store = init_params(&cfg, 13);
    let mut g = MolGraph::new(1);
    g.atoms[0] = crate::molgraph::tok::C;
    g.x[0] = [0.3, -0.2, 0.9];
    let pred = denoise(&store, &cfg, &g, 0.5, None);
    assert!(pred.xhat[0].iter().all(|v| v.is_finite()));
    assert!(pred.atom_logits.iter().all(|v| v.is_finite()));
    // zero-init position gates: single atom stays put
    assert_eq!(pred.xhat[0], g.x[0]);
}

/// Exhaustive finite-difference check of every parameter entry on the tiny
/// config, against a surrogate scalar of all four outputs.
#[test]
fn denoise_full_gradient_check_tiny() {
    let cfg = NetConfig::tiny();
    let mut store = init_params(&cfg, 14);
    // move position gates off zero so their gradients are generic
    let mut prng = substream(9, "fd", 0);
    for i in 0..store.len() {
        let vals = store.values_mut(i);
        for v in vals.iter_mut() {
            *v += 0.05 * prng.sample::<f64, _>(StandardNormal);
        }
    }
    let g = {
        let raw = generate_toy_dataset(1, 800, (4, 4)).unwrap().remove(0);
        let vocabs = Vocabs::standard();
        let mut rng = substream(10, "fdmol", 0);
        build_path_sample_at(&raw, 0.55, &vocabs, &PathSpecs::default(), &mut rng).g_t
    };
    let t = 0.55;

    let names: Vec<String> = (0..store.len()).map(|i| store.name(i).to_string()).collect();
    let inputs: Vec<Vec<f64>> = (0..store.len()).map(|i| store.values(i).to_vec()).collect();
    let shapes: Vec<Vec<usize>> = (0..store.len()).map(|i| store.shape(i).to_vec()).collect();

    let eval = |bufs: &[Vec<f64>]| -> f64 {
        let mut s = ParamStore::new();
        for k in 0..names.len() {
            s.add(&names[k], shapes[k].clone(), bufs[k].clone());
        }
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &s);
        let ids = denoise_on_tape(&mut tape, &bound, &cfg, &g, t, None);
        let m1 = {
            let sq = tape.mul(ids.xhat, ids.xhat);
            tape.mean(sq)
        };
        let m2 = {
            let sq = tape.mul(ids.atom_logits, ids.atom_logits);
            tape.mean(sq)
        };
        let m3 = {
            let sq = tape.mul(ids.charge_logits, ids.charge_logits);
            tape.mean(sq)
        };
        let m4 = {
            let sq = tape.mul(ids.bond_logits, ids.bond_logits);
            tape.mean(sq)
        };
        let a = tape.add(m1, m2);
        let b = tape.add(m3, m4);
        let loss = tape.add(a, b);
        tape.value_scalar(loss)
    };

    let fd = central_diff(&eval, &inputs, 1e-5);

    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, &store);
    let ids = denoise_on_tape(&mut tape, &bound, &cfg, &g, t, None);
    let m1 = {
        let sq = tape.mul(ids.xhat, ids.xhat);
        tape.mean(sq)
    };
    let m2 = {
        let sq = tape.mul(ids.atom_logits, ids.atom_logits);
        tape.mean(sq)
    };
    let m3 = {
        let sq = tape.mul(ids.charge_logits, ids.charge_logits);
        tape.mean(sq)
    };
    let m4 = {
        let sq = tape.mul(ids.bond_logits, ids.bond_logits);
        tape.mean(sq)
    };
    let a = tape.add(m1, m2);
    let b = tape.add(m3, m4);
    let loss = tape.add(a, b);
    tape.backward(loss);

    for k in 0..names.len() {
        let id = bound.p(&names[k]);
        let ana = tape
            .grad(id)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let err = max_rel_err(&ana, &fd[k]);
        assert!(err < 1e-4, "param {}: rel err {err}", names[k]);
    }
}
