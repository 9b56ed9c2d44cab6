use diffusion_prior::model::DenoiserConfig;
use diffusion_prior::nn::unet::UNet;
use diffusion_prior::nn::Tensor4;
use std::time::Instant;

fn main() {
    // desk_default (~2M params) on 64x64
    let cfg = DenoiserConfig::desk_default();
    let mut net = UNet::new(&cfg.unet_config(), 0);
    println!("desk_default params: {}", net.num_params());
    let x = Tensor4::from_shape_fn((4, 2, 64, 64), |(n, c, i, j)| ((n + c + i + j) as f32 * 0.1).sin());
    let ts = [10usize, 200, 500, 900];
    let t0 = Instant::now();
    let iters = 5;
    for _ in 0..iters {
        let _ = net.infer(&x, &ts, None);
    }
    let dt = t0.elapsed().as_secs_f64() / (iters * 4) as f64;
    println!("64x64 fwd: {:.1} ms/slice", dt * 1e3);

    let t0 = Instant::now();
    for _ in 0..iters {
        let (y, cache) = net.forward(&x, &ts);
        net.zero_grad();
        let _ = net.backward(&cache, &y);
    }
    let dt2 = t0.elapsed().as_secs_f64() / iters as f64;
    println!("64x64 fwd+bwd batch4: {:.1} ms/step -> 2000 steps = {:.1} min", dt2 * 1e3, dt2 * 2000.0 / 60.0);

    // small config on 32x32
    let cfg = DenoiserConfig::small();
    let mut net = UNet::new(&cfg.unet_config(), 0);
    println!("small params: {}", net.num_params());
    let x = Tensor4::from_shape_fn((16, 2, 32, 32), |(n, c, i, j)| ((n + c + i + j) as f32 * 0.1).sin());
    let ts = vec![100usize; 16];
    let t0 = Instant::now();
    for _ in 0..iters {
        let _ = net.infer(&x, &ts, None);
    }
    let dt = t0.elapsed().as_secs_f64() / (iters * 16) as f64;
    println!("32x32 fwd: {:.2} ms/slice", dt * 1e3);
    let x4 = Tensor4::from_shape_fn((4, 2, 32, 32), |(n, c, i, j)| ((n + c + i + j) as f32 * 0.1).sin());
    let ts4 = vec![100usize; 4];
    let t0 = Instant::now();
    for _ in 0..iters {
        let (y, cache) = net.forward(&x4, &ts4);
        net.zero_grad();
        let _ = net.backward(&cache, &y);
    }
    let dt2 = t0.elapsed().as_secs_f64() / iters as f64;
    println!("32x32 fwd+bwd batch4: {:.1} ms/step -> 1500 steps = {:.1} min", dt2 * 1e3, dt2 * 1500.0 / 60.0);
}
