use molgen::gvpnet::*;
use molgen::molgraph::{generate_toy_dataset, Vocabs};
use molgen::numkit::Tape;
use molgen::paths::{build_path_sample_at, PathSpecs};
use molgen::rng::substream;

fn main() {
    let cfg = NetConfig::default();
    let store = init_params(&cfg, 1);
    println!("trainable scalars: {}", store.n_trainable_scalars());

    let raw = generate_toy_dataset(1, 2, (12, 12)).unwrap().remove(0);
    let vocabs = Vocabs::standard();
    let mut rng = substream(3, "b", 0);
    let s = build_path_sample_at(&raw, 0.5, &vocabs, &PathSpecs::default(), &mut rng);
    let g = &s.g_t;
    println!("molecule size incl fakes: {}", g.n());

    // inference forward
    let t0 = std::time::Instant::now();
    let iters = 30;
    for _ in 0..iters {
        let _ = denoise(&store, &cfg, g, 0.5, None);
    }
    println!("inference forward: {:?}/iter", t0.elapsed() / iters);

    // forward + backward
    let t0 = std::time::Instant::now();
    for _ in 0..iters {
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &store);
        let ids = denoise_on_tape(&mut tape, &bound, &cfg, g, 0.5, None);
        let sq = tape.mul(ids.xhat, ids.xhat);
        let m = tape.mean(sq);
        let sq2 = tape.mul(ids.atom_logits, ids.atom_logits);
        let m2 = tape.mean(sq2);
        let loss = tape.add(m, m2);
        tape.backward(loss);
    }
    println!("forward+backward: {:?}/iter", t0.elapsed() / iters);
}
