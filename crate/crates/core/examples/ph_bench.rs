use std::time::Instant;

use localglobal::cubical::{compute_persistence, Filtration};
use localglobal::volume::{gaussian_filter, Volume3D};
use rand::{Rng, SeedableRng};

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let dims = [args[0], args[1], args[2]];
    let smooth = args.get(3).copied().unwrap_or(0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let mut v = Volume3D::from_fn(dims, |_, _, _| rng.random::<f32>()).unwrap();
    if smooth > 0 {
        v = gaussian_filter(&v, smooth as f64).unwrap();
    }
    let t = Instant::now();
    let d = compute_persistence(&v, Filtration::Sublevel, &[0, 1, 2]).unwrap();
    println!("{:?} smooth {smooth}: {} pairs ({} / {} / {}) in {:?}", dims, d.pairs.len(), d.count(0), d.count(1), d.count(2), t.elapsed());
}
