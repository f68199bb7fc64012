//! The denoising network: molecule update blocks built from cross-product
//! GVPs, per-modality prediction heads, and the self-conditioning residual
//! module.
//!
//! The network reads a noisy molecule `g_t` (MASK tokens allowed) plus the
//! time and predicts the final molecule: positions directly, and logits over
//! the non-MASK classes for atom types, charges, and bond orders. Position
//! updates are translation-invariant increments, so predicted coordinates
//! are SE(3)-equivariant while every logit is invariant.

mod gvp;
mod params;

pub use gvp::{broadcast_row, gvp_forward, layer_norm_state, linear, GvpParams, GvpSpec, VecFeat};
pub use params::{orthogonal, ParamStore};

use crate::coupling::Point3;
use crate::molgraph::{MolGraph, Vocabs};
use crate::numkit::{RbfSpec, Tape, Tensor};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// Architecture hyperparameters. The defaults are the desk-scale model:
/// 4 blocks at (d_s, d_v, d_e) = (64, 16, 32), about 0.34M parameters.
#[derive(Clone, Copy, Debug)]
pub struct NetConfig {
    pub blocks: usize,
    pub d_s: usize,
    pub d_v: usize,
    pub d_e: usize,
    pub gvp_hidden_v: usize,
    pub gvp_cross: usize,
    pub time_dim: usize,
    pub node_head_hidden: usize,
    pub edge_head_hidden: usize,
    pub rbf: RbfSpec,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            blocks: 4,
            d_s: 64,
            d_v: 16,
            d_e: 32,
            gvp_hidden_v: 16,
            gvp_cross: 8,
            time_dim: 16,
            node_head_hidden: 64,
            edge_head_hidden: 32,
            rbf: RbfSpec::default(),
        }
    }
}

impl NetConfig {
    /// A deliberately tiny variant for exhaustive gradient checks.
    pub fn tiny() -> Self {
        NetConfig {
            blocks: 2,
            d_s: 8,
            d_v: 4,
            d_e: 6,
            gvp_hidden_v: 4,
            gvp_cross: 2,
            time_dim: 4,
            node_head_hidden: 8,
            edge_head_hidden: 8,
            rbf: RbfSpec::new(8, 0.0, 8.0, 1.0),
        }
    }

    fn atom_full(&self) -> usize {
        Vocabs::standard().atom.len()
    }

    fn charge_full(&self) -> usize {
        Vocabs::standard().charge.len()
    }

    fn bond_full(&self) -> usize {
        Vocabs::standard().bond.len()
    }

    pub fn atom_classes(&self) -> usize {
        self.atom_full() - 1
    }

    pub fn charge_classes(&self) -> usize {
        self.charge_full() - 1
    }

    pub fn bond_classes(&self) -> usize {
        self.bond_full() - 1
    }

    fn node_embed_in(&self) -> usize {
        self.atom_full() + self.charge_full() + self.time_dim
    }

    fn selfcond_node_in(&self) -> usize {
        self.atom_classes() + self.charge_classes() + self.rbf.n_basis
    }

    fn selfcond_edge_in(&self) -> usize {
        self.bond_classes() + self.rbf.n_basis
    }

    fn msg_spec(&self, k: usize) -> GvpSpec {
        GvpSpec {
            in_s: if k == 0 { self.d_s + self.d_e + self.rbf.n_basis } else { self.d_s },
            in_v: if k == 0 { self.d_v + 1 } else { self.d_v },
            out_s: self.d_s,
            out_v: self.d_v,
            hidden_v: self.gvp_hidden_v,
            cross: self.gvp_cross,
            scalar_act: k < 2,
            sigmoid_gate: true,
        }
    }

    fn upd_spec(&self, k: usize) -> GvpSpec {
        GvpSpec {
            in_s: self.d_s,
            in_v: self.d_v,
            out_s: self.d_s,
            out_v: self.d_v,
            hidden_v: self.gvp_hidden_v,
            cross: self.gvp_cross,
            scalar_act: k < 2,
            sigmoid_gate: true,
        }
    }

    /// Position-update chain; the last GVP emits one vector, no scalars, and
    /// uses an identity vector gate.
    fn pos_spec(&self, k: usize) -> GvpSpec {
        if k < 2 {
            GvpSpec {
                in_s: self.d_s,
                in_v: self.d_v,
                out_s: self.d_s,
                out_v: self.d_v,
                hidden_v: self.gvp_hidden_v,
                cross: self.gvp_cross,
                scalar_act: true,
                sigmoid_gate: true,
            }
        } else {
            GvpSpec {
                in_s: self.d_s,
                in_v: self.d_v,
                out_s: 0,
                out_v: 1,
                hidden_v: self.gvp_hidden_v,
                cross: self.gvp_cross,
                scalar_act: true,
                sigmoid_gate: false,
            }
        }
    }
}

/// The network's endpoint prediction: coordinates plus logits over non-MASK
/// classes. Bond logits are symmetrized across `(i,j)`/`(j,i)`.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub xhat: Vec<Point3>,
    /// Row-major `[n, atom classes]`.
    pub atom_logits: Vec<f64>,
    /// Row-major `[n, charge classes]`.
    pub charge_logits: Vec<f64>,
    /// Row-major `[n*n, bond classes]`.
    pub bond_logits: Vec<f64>,
}

/// Tape handles to the prediction, for loss construction.
#[derive(Clone, Copy)]
pub struct PredIds {
    pub xhat: Tensor,
    pub atom_logits: Tensor,
    pub charge_logits: Tensor,
    pub bond_logits: Tensor,
}

fn gvp_param_names(prefix: &str) -> [String; 8] {
    [
        format!("{prefix}.w_h"),
        format!("{prefix}.w_ca"),
        format!("{prefix}.w_cb"),
        format!("{prefix}.w_m"),
        format!("{prefix}.b_m"),
        format!("{prefix}.w_mu"),
        format!("{prefix}.w_g"),
        format!("{prefix}.b_g"),
    ]
}

fn add_gvp(store: &mut ParamStore, prefix: &str, spec: &GvpSpec, rng: &mut ChaCha8Rng, zero_gate: bool) {
    let names = gvp_param_names(prefix);
    let width = spec.hidden_v + spec.cross;
    store.add(&names[0], vec![spec.in_v, spec.hidden_v], orthogonal(spec.in_v, spec.hidden_v, rng));
    let cross = spec.cross.max(1);
    store.add(&names[1], vec![spec.hidden_v, cross], orthogonal(spec.hidden_v, cross, rng));
    store.add(&names[2], vec![spec.hidden_v, cross], orthogonal(spec.hidden_v, cross, rng));
    let m_in = spec.in_s + width;
    store.add(&names[3], vec![m_in, spec.s_mid()], orthogonal(m_in, spec.s_mid(), rng));
    store.add(&names[4], vec![1, spec.s_mid()], vec![0.0; spec.s_mid()]);
    let out_v = spec.out_v.max(1);
    store.add(&names[5], vec![width, out_v], orthogonal(width, out_v, rng));
    if zero_gate {
        store.add(&names[6], vec![spec.s_mid(), out_v], vec![0.0; spec.s_mid() * out_v]);
    } else {
        store.add(&names[6], vec![spec.s_mid(), out_v], orthogonal(spec.s_mid(), out_v, rng));
    }
    store.add(&names[7], vec![1, out_v], vec![0.0; out_v]);
}

fn add_linear(store: &mut ParamStore, prefix: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) {
    store.add(&format!("{prefix}.w"), vec![rows, cols], orthogonal(rows, cols, rng));
    store.add(&format!("{prefix}.b"), vec![1, cols], vec![0.0; cols]);
}

fn add_mlp2(store: &mut ParamStore, prefix: &str, d_in: usize, hidden: usize, d_out: usize, rng: &mut ChaCha8Rng) {
    store.add(&format!("{prefix}.w1"), vec![d_in, hidden], orthogonal(d_in, hidden, rng));
    store.add(&format!("{prefix}.b1"), vec![1, hidden], vec![0.0; hidden]);
    store.add(&format!("{prefix}.w2"), vec![hidden, d_out], orthogonal(hidden, d_out, rng));
    store.add(&format!("{prefix}.b2"), vec![1, d_out], vec![0.0; d_out]);
}

fn add_ln(store: &mut ParamStore, prefix: &str, d: usize) {
    store.add(&format!("{prefix}.gamma"), vec![1, d], vec![1.0; d]);
    store.add(&format!("{prefix}.beta"), vec![1, d], vec![0.0; d]);
}

/// Build and initialize the full parameter set. Linear maps start
/// semi-orthogonal with gain 1; the vector gate of each block's final
/// position GVP starts at zero so an untrained network is the identity on
/// positions.
pub fn init_params(cfg: &NetConfig, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    add_mlp2(&mut store, "embed.node", cfg.node_embed_in(), cfg.d_s, cfg.d_s, &mut rng);
    add_linear(&mut store, "embed.edge", cfg.bond_full(), cfg.d_e, &mut rng);
    add_linear(&mut store, "selfcond.node", cfg.selfcond_node_in(), cfg.d_s, &mut rng);
    add_linear(&mut store, "selfcond.edge", cfg.selfcond_edge_in(), cfg.d_e, &mut rng);
    for l in 0..cfg.blocks {
        for k in 0..3 {
            add_gvp(&mut store, &format!("block{l}.msg.g{k}"), &cfg.msg_spec(k), &mut rng, false);
        }
        for k in 0..3 {
            add_gvp(&mut store, &format!("block{l}.upd.g{k}"), &cfg.upd_spec(k), &mut rng, false);
        }
        add_ln(&mut store, &format!("block{l}.ln_node"), cfg.d_s);
        for k in 0..3 {
            add_gvp(&mut store, &format!("block{l}.pos.g{k}"), &cfg.pos_spec(k), &mut rng, k == 2);
        }
        add_mlp2(
            &mut store,
            &format!("block{l}.edge"),
            2 * cfg.d_s + cfg.rbf.n_basis,
            cfg.node_head_hidden,
            cfg.d_e,
            &mut rng,
        );
        add_ln(&mut store, &format!("block{l}.ln_edge"), cfg.d_e);
    }
    add_mlp2(&mut store, "head.atom", cfg.d_s, cfg.node_head_hidden, cfg.atom_classes(), &mut rng);
    add_mlp2(&mut store, "head.charge", cfg.d_s, cfg.node_head_hidden, cfg.charge_classes(), &mut rng);
    add_mlp2(&mut store, "head.bond", cfg.d_e, cfg.edge_head_hidden, cfg.bond_classes(), &mut rng);
    store
}

/// Tape bindings for every trainable parameter, by name.
pub struct BoundParams {
    map: HashMap<String, Tensor>,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, store: &ParamStore) -> Self {
        let mut map = HashMap::new();
        for i in 0..store.len() {
            if !store.is_trainable(i) {
                continue;
            }
            let t = tape.leaf(store.values(i).to_vec(), store.shape(i));
            map.insert(store.name(i).to_string(), t);
        }
        BoundParams { map }
    }

    pub fn p(&self, name: &str) -> Tensor {
        *self.map.get(name).unwrap_or_else(|| panic!("unbound param {name}"))
    }

    fn gvp(&self, prefix: &str) -> GvpParams {
        let n = gvp_param_names(prefix);
        GvpParams {
            w_h: self.p(&n[0]),
            w_ca: self.p(&n[1]),
            w_cb: self.p(&n[2]),
            w_m: self.p(&n[3]),
            b_m: self.p(&n[4]),
            w_mu: self.p(&n[5]),
            w_g: self.p(&n[6]),
            b_g: self.p(&n[7]),
        }
    }
}

/// Constant selection/aggregation matrices for a fully connected graph of
/// `n` atoms, with ordered pairs laid out row-major as `p = i*n + j`.
struct PairConsts {
    /// `[n^2, n]`, selects the sender `i` of each pair.
    k_i: Tensor,
    /// `[n^2, n]`, selects the receiver `j`.
    k_j: Tensor,
    /// `k_i - k_j`: relative-position builder.
    diff: Tensor,
    /// `[n, n^2]`: mean over incoming messages `(j, i)`, zero for n = 1.
    agg: Tensor,
    /// `[n^2, n^2]`: permutation mapping pair `(i,j)` to `(j,i)`.
    swap: Tensor,
}

fn pair_consts(tape: &mut Tape, n: usize) -> PairConsts {
    let nn = n * n;
    let mut k_i = vec![0.0; nn * n];
    let mut k_j = vec![0.0; nn * n];
    let mut diff = vec![0.0; nn * n];
    for i in 0..n {
        for j in 0..n {
            let p = i * n + j;
            k_i[p * n + i] = 1.0;
            k_j[p * n + j] = 1.0;
            diff[p * n + i] += 1.0;
            diff[p * n + j] -= 1.0;
        }
    }
    let mut agg = vec![0.0; n * nn];
    if n > 1 {
        let w = 1.0 / (n - 1) as f64;
        for i in 0..n {
            for j in 0..n {
                if j != i {
                    agg[i * nn + j * n + i] = w;
                }
            }
        }
    }
    let mut swap = vec![0.0; nn * nn];
    for i in 0..n {
        for j in 0..n {
            swap[(i * n + j) * nn + (j * n + i)] = 1.0;
        }
    }
    PairConsts {
        k_i: tape.constant(k_i, &[nn, n]),
        k_j: tape.constant(k_j, &[nn, n]),
        diff: tape.constant(diff, &[nn, n]),
        agg: tape.constant(agg, &[n, nn]),
        swap: tape.constant(swap, &[nn, nn]),
    }
}

fn one_hot(tokens: &[usize], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; tokens.len() * width];
    for (r, &t) in tokens.iter().enumerate() {
        out[r * width + t] = 1.0;
    }
    out
}

/// Sinusoidal features of the scalar time.
pub fn time_features(t: f64, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let freq = std::f64::consts::PI * (1 << k) as f64;
        out.push((freq * t).sin());
        out.push((freq * t).cos());
    }
    out
}

fn chain3(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg_specs: [GvpSpec; 3],
    prefix: &str,
    s: Tensor,
    v: &VecFeat,
) -> (Tensor, Option<VecFeat>) {
    let mut s_cur = s;
    let mut v_cur = *v;
    let mut v_out = None;
    for (k, spec) in cfg_specs.iter().enumerate() {
        let p = bound.gvp(&format!("{prefix}.g{k}"));
        let (s_next, v_next) = gvp_forward(tape, &p, spec, s_cur, &v_cur);
        s_cur = s_next;
        v_out = v_next;
        if let Some(vn) = v_out {
            v_cur = vn;
        }
    }
    (s_cur, v_out)
}

fn mlp2(tape: &mut Tape, bound: &BoundParams, prefix: &str, x: Tensor) -> Tensor {
    let h = linear(tape, x, bound.p(&format!("{prefix}.w1")), bound.p(&format!("{prefix}.b1")));
    let h = tape.silu(h);
    linear(tape, h, bound.p(&format!("{prefix}.w2")), bound.p(&format!("{prefix}.b2")))
}

/// Pairwise distances from positions: returns `(d [n^2,1], rbf [n^2, B])`.
/// The epsilon inside the square root doubles as the division guard: the
/// diagonal comes out at 1e-8 with zero gradient into coincident atoms.
fn pair_distances(
    tape: &mut Tape,
    consts: &PairConsts,
    cfg: &NetConfig,
    x: Tensor,
) -> (Tensor, VecFeat, Tensor) {
    let xc = VecFeat::from_points(tape, x);
    let rel = VecFeat {
        x: tape.matmul(consts.diff, xc.x),
        y: tape.matmul(consts.diff, xc.y),
        z: tape.matmul(consts.diff, xc.z),
    };
    let sq = rel.norm_sq(tape);
    let reg = tape.add_const(sq, 1e-16);
    let d = tape.sqrt(reg);
    let rel_hat = VecFeat { x: tape.div(rel.x, d), y: tape.div(rel.y, d), z: tape.div(rel.z, d) };
    let nn = tape.shape(d)[0];
    let d_flat = tape.reshape(d, &[nn]);
    let rbf = tape.rbf(d_flat, cfg.rbf);
    (d, rel_hat, rbf)
}

/// Rotation-invariant features the self-conditioning module feeds on:
/// class probabilities of the previous prediction plus radial embeddings of
/// its displacement from the current state and of its predicted pair
/// distances.
fn selfcond_features(cfg: &NetConfig, g_t: &MolGraph, prev: &Prediction) -> (Vec<f64>, Vec<f64>) {
    let n = g_t.n();
    let softmax = |row: &[f64]| -> Vec<f64> {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = row.iter().map(|&v| (v - mx).exp()).collect();
        let z: f64 = ex.iter().sum();
        ex.iter().map(|&e| e / z).collect()
    };
    let a = cfg.atom_classes();
    let c = cfg.charge_classes();
    let b = cfg.bond_classes();
    let nb = cfg.rbf.n_basis;
    let mut node = Vec::with_capacity(n * cfg.selfcond_node_in());
    for i in 0..n {
        node.extend(softmax(&prev.atom_logits[i * a..(i + 1) * a]));
        node.extend(softmax(&prev.charge_logits[i * c..(i + 1) * c]));
        let dx = crate::coupling::sq_dist(&prev.xhat[i], &g_t.x[i]).sqrt();
        let mut buf = vec![0.0; nb];
        cfg.rbf.eval_into(dx, &mut buf);
        node.extend(buf);
    }
    let mut edge = Vec::with_capacity(n * n * cfg.selfcond_edge_in());
    for i in 0..n {
        for j in 0..n {
            let p = i * n + j;
            edge.extend(softmax(&prev.bond_logits[p * b..(p + 1) * b]));
            let dij = crate::coupling::sq_dist(&prev.xhat[i], &prev.xhat[j]).sqrt();
            let mut buf = vec![0.0; nb];
            cfg.rbf.eval_into(dij, &mut buf);
            edge.extend(buf);
        }
    }
    (node, edge)
}

/// Run the full network on a tape, returning tape handles to the prediction.
pub fn denoise_on_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &NetConfig,
    g_t: &MolGraph,
    t: f64,
    prev: Option<&Prediction>,
) -> PredIds {
    let n = g_t.n();
    assert!(n >= 1, "gvpnet::denoise: empty molecule");
    assert!((0.0..=1.0).contains(&t), "gvpnet::denoise: t={t} out of range");
    let (af, cf, bf) = (cfg.atom_full(), cfg.charge_full(), cfg.bond_full());
    assert!(
        g_t.atoms.iter().all(|&x| x < af)
            && g_t.charges.iter().all(|&x| x < cf)
            && g_t.bonds.iter().all(|&x| x < bf),
        "gvpnet::denoise: contract error, token out of vocabulary range"
    );

    let consts = pair_consts(tape, n);

    // Initial node scalars: atom/charge one-hots plus time features through
    // a shallow MLP.
    let mut node_in = Vec::with_capacity(n * cfg.node_embed_in());
    let a_hot = one_hot(&g_t.atoms, af);
    let c_hot = one_hot(&g_t.charges, cf);
    let tf = time_features(t, cfg.time_dim);
    for i in 0..n {
        node_in.extend_from_slice(&a_hot[i * af..(i + 1) * af]);
        node_in.extend_from_slice(&c_hot[i * cf..(i + 1) * cf]);
        node_in.extend_from_slice(&tf);
    }
    let node_in = tape.constant(node_in, &[n, cfg.node_embed_in()]);
    let mut s = mlp2(tape, bound, "embed.node", node_in);

    let e_hot = tape.constant(one_hot(&g_t.bonds, bf), &[n * n, bf]);
    let mut e = linear(tape, e_hot, bound.p("embed.edge.w"), bound.p("embed.edge.b"));

    if let Some(prev) = prev {
        assert_eq!(prev.xhat.len(), n, "gvpnet::denoise: prev prediction size mismatch");
        let (node_feat, edge_feat) = selfcond_features(cfg, g_t, prev);
        let nf = tape.constant(node_feat, &[n, cfg.selfcond_node_in()]);
        let ef = tape.constant(edge_feat, &[n * n, cfg.selfcond_edge_in()]);
        let rn = linear(tape, nf, bound.p("selfcond.node.w"), bound.p("selfcond.node.b"));
        let re = linear(tape, ef, bound.p("selfcond.edge.w"), bound.p("selfcond.edge.b"));
        s = tape.add(s, rn);
        e = tape.add(e, re);
    }

    let mut v = VecFeat::zeros(tape, n, cfg.d_v);
    let mut x = tape.constant(g_t.x.iter().flatten().cloned().collect(), &[n, 3]);

    for l in 0..cfg.blocks {
        // NFU: messages over ordered pairs from sender features, the edge
        // state, and a radial embedding; mean-aggregated, residual, norm.
        let (_d, rel_hat, rbf_d) = pair_distances(tape, &consts, cfg, x);
        let s_i = tape.matmul(consts.k_i, s);
        let msg_s_in = tape.concat(&[s_i, e, rbf_d], 1);
        let v_i = VecFeat {
            x: tape.matmul(consts.k_i, v.x),
            y: tape.matmul(consts.k_i, v.y),
            z: tape.matmul(consts.k_i, v.z),
        };
        let msg_v_in = v_i.concat(tape, &rel_hat);
        let specs = [cfg.msg_spec(0), cfg.msg_spec(1), cfg.msg_spec(2)];
        let (m_s, m_v) = chain3(tape, bound, specs, &format!("block{l}.msg"), msg_s_in, &msg_v_in);
        let m_v = m_v.expect("message chain emits vectors");
        let agg_s = tape.matmul(consts.agg, m_s);
        let agg_v = VecFeat {
            x: tape.matmul(consts.agg, m_v.x),
            y: tape.matmul(consts.agg, m_v.y),
            z: tape.matmul(consts.agg, m_v.z),
        };
        let specs = [cfg.upd_spec(0), cfg.upd_spec(1), cfg.upd_spec(2)];
        let (u_s, u_v) = chain3(tape, bound, specs, &format!("block{l}.upd"), agg_s, &agg_v);
        let u_v = u_v.expect("update chain emits vectors");
        let rs = tape.add(s, u_s);
        let rv = v.add(tape, &u_v);
        let (s_new, v_new) = layer_norm_state(
            tape,
            rs,
            &rv,
            bound.p(&format!("block{l}.ln_node.gamma")),
            bound.p(&format!("block{l}.ln_node.beta")),
        );
        s = s_new;
        v = v_new;

        // NPU: per-node equivariant increment.
        let specs = [cfg.pos_spec(0), cfg.pos_spec(1), cfg.pos_spec(2)];
        let (_, dx) = chain3(tape, bound, specs, &format!("block{l}.pos"), s, &v);
        let dx = dx.expect("position chain emits one vector");
        let dx_pts = dx.to_points(tape);
        x = tape.add(x, dx_pts);

        // EFU: edge update from the two endpoint scalars and the distance at
        // the freshly updated positions.
        let (_d2, _rel2, rbf_d2) = pair_distances(tape, &consts, cfg, x);
        let s_i2 = tape.matmul(consts.k_i, s);
        let s_j2 = tape.matmul(consts.k_j, s);
        let eh = tape.concat(&[s_i2, s_j2, rbf_d2], 1);
        let fe = mlp2(tape, bound, &format!("block{l}.edge"), eh);
        let re = tape.add(e, fe);
        let ln = tape.layer_norm_rows(re, 1e-5);
        let gm = broadcast_row(tape, bound.p(&format!("block{l}.ln_edge.gamma")), n * n);
        let bt = broadcast_row(tape, bound.p(&format!("block{l}.ln_edge.beta")), n * n);
        let lng = tape.mul(ln, gm);
        e = tape.add(lng, bt);
    }

    let atom_logits = mlp2(tape, bound, "head.atom", s);
    let charge_logits = mlp2(tape, bound, "head.charge", s);
    let bond_raw = mlp2(tape, bound, "head.bond", e);
    let bond_swapped = tape.matmul(consts.swap, bond_raw);
    let bond_sum = tape.add(bond_raw, bond_swapped);
    let bond_logits = tape.scale(bond_sum, 0.5);

    PredIds { xhat: x, atom_logits, charge_logits, bond_logits }
}

/// Inference-mode denoise: runs on a value-only tape and copies the outputs.
pub fn denoise(
    store: &ParamStore,
    cfg: &NetConfig,
    g_t: &MolGraph,
    t: f64,
    prev: Option<&Prediction>,
) -> Prediction {
    let mut tape = Tape::inference();
    let bound = BoundParams::bind(&mut tape, store);
    let ids = denoise_on_tape(&mut tape, &bound, cfg, g_t, t, prev);
    extract_prediction(&tape, &ids, g_t.n())
}

pub fn extract_prediction(tape: &Tape, ids: &PredIds, n: usize) -> Prediction {
    let xv = tape.value(ids.xhat);
    let xhat = (0..n).map(|i| [xv[i * 3], xv[i * 3 + 1], xv[i * 3 + 2]]).collect();
    Prediction {
        xhat,
        atom_logits: tape.value(ids.atom_logits).to_vec(),
        charge_logits: tape.value(ids.charge_logits).to_vec(),
        bond_logits: tape.value(ids.bond_logits).to_vec(),
    }
}

#[cfg(test)]
mod tests;
