use photoseq_tensor::{Conv, ConvShape, Exec, Graph, ParamStore, Tensor};
use rand::SeedableRng;
use std::time::Instant;

fn main() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    for &(c, hw) in &[(16usize, 32usize), (64, 32), (8, 32)] {
        let mut store = ParamStore::new();
        let shape = ConvShape { c_in: c, c_out: c, kernel: 3, stride: 1, pad: 1 };
        let conv = Conv::new(&mut store, &mut rng, "c", shape, false).unwrap();
        let x = Tensor::full(&[4, c, hw, hw], 0.5);
        let t = Instant::now();
        let iters = 20;
        for _ in 0..iters {
            let mut g = Graph::with_trainable(&store);
            let xv = g.leaf(x.clone());
            let y = g.conv(&xv, &store, &conv).unwrap();
            let seed = Tensor::full(g.value(y).shape(), 1.0);
            g.backward(vec![(y, seed)]).unwrap();
        }
        let dt = t.elapsed() / iters;
        let macs = 4.0 * (c * c * 9 * hw * hw) as f64 * 3.0;
        println!("c={c} hw={hw}: fwd+bwd {dt:?} ({:.1} GMAC/s)", macs / dt.as_secs_f64() / 1e9);
    }
}
