use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use std::time::Instant;
fn main() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for n in [400usize, 800, 1500] {
        let m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let spd = &m * m.transpose() + DMatrix::identity(n, n) * n as f64;
        let t0 = Instant::now();
        let mut count = 0;
        while t0.elapsed().as_secs_f64() < 2.0 {
            let c = spd.clone().cholesky().unwrap();
            std::hint::black_box(&c);
            count += 1;
        }
        let per = t0.elapsed().as_secs_f64() / count as f64;
        println!("n={n}: cholesky {per:.3}s ({:.2} GFLOP/s)", n.pow(3) as f64 / 3.0 / per / 1e9);
    }
}
