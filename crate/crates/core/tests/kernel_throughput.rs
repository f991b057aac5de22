//! Manual throughput probe for the matrix kernel (run with `--ignored`).

use plastlab_core::linalg::{matmul_into, Matrix};
use plastlab_core::rng::RngStream;
use std::time::Instant;

#[test]
#[ignore = "manual benchmark; prints f64 GFLOP/s for training-shaped products"]
fn matmul_throughput() {
    let mut rng = RngStream::new(0, 0);
    // Shapes that dominate a training step: activations (batch x width) times
    // transposed weights (width x width), and gradient products.
    let shapes = [
        (128usize, 256usize, 256usize),
        (256, 128, 256),
        (128, 64, 256),
        (128, 256, 10),
        (512, 256, 256),
    ];
    for (m, k, n) in shapes {
        let a = Matrix::from_fn(m, k, |_, _| rng.normal());
        let b = Matrix::from_fn(k, n, |_, _| rng.normal());
        let mut c = Matrix::zeros(m, n);
        // Warm up.
        let mut sink = 0.0;
        for _ in 0..3 {
            matmul_into(&mut c, &a, &b).unwrap();
            sink += c.get(0, 0);
        }
        let flops_per = 2.0 * (m * k * n) as f64;
        let reps = ((2e9 / flops_per) as usize).max(3);
        let t0 = Instant::now();
        for _ in 0..reps {
            matmul_into(&mut c, &a, &b).unwrap();
            sink += c.get(0, 0);
        }
        let dt = t0.elapsed().as_secs_f64();
        let gflops = flops_per * reps as f64 / dt / 1e9;
        println!("({m:4} x {k:4} x {n:4})  {gflops:7.2} GFLOP/s   (sink {sink:.3e})");
    }
}
