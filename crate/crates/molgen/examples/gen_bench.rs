fn main() {
    let t0 = std::time::Instant::now();
    let mols = molgen::molgraph::generate_toy_dataset(2000, 7, (5, 12)).unwrap();
    println!("generated {} molecules in {:?}", mols.len(), t0.elapsed());
    let hist = molgen::molgraph::size_histogram(&mols);
    println!("size histogram: {:?}", hist);
}
