use miztex::rng::Rng;
use miztex::tensor::Tensor;
use std::time::Instant;

fn main() {
    let mut rng = Rng::new(1);
    // Typical training-step GEMM: batch x (2d) times (2d) x (4d) at d=128.
    let a = Tensor::uniform(64, 256, -1.0, 1.0, &mut rng);
    let b = Tensor::uniform(256, 512, -1.0, 1.0, &mut rng);
    let iters = 2000;
    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..iters {
        let c = a.matmul(&b);
        acc += c.at(0, 0);
    }
    let dt = t0.elapsed().as_secs_f64();
    let flops = 2.0 * 64.0 * 256.0 * 512.0 * iters as f64;
    println!("matmul:    {:.2} GFLOP/s ({acc})", flops / dt / 1e9);

    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..iters {
        let c = a.matmul_nt(&b.transpose());
        acc += c.at(0, 0);
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("matmul_nt: {:.2} GFLOP/s ({acc})", flops / dt / 1e9);

    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..iters {
        let c = a.transpose().matmul_tn(&b);
        acc += c.at(0, 0);
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("matmul_tn: {:.2} GFLOP/s ({acc})", flops / dt / 1e9);
}
