use ndarray::Array3;
use sampling_forward::{adjoint, forward, gen_poisson_mask, scale_measurements};
use variational_recon::{reconstruct_core, ReconConfig, VoxelBackend};
use volume_core::{generate_phantom, synth_coil_maps, ComplexVolume, C32};

fn main() {
    let dims = (12, 12, 12);
    let mask = gen_poisson_mask((12, 12), 1.3, (6, 6), 3).unwrap();
    println!("achieved R {}", mask.achieved_r);
    let x = generate_phantom(2, dims, 6).unwrap();
    let maps = synth_coil_maps(dims, 4, 102).unwrap();
    let ksp = forward(&x, &maps, &mask).unwrap();

    // CG oracle
    let applyop = |v: &Array3<C32>| -> Array3<C32> {
        let vol = ComplexVolume::new(v.clone(), [1.0;3]).unwrap();
        let ax = forward(&vol, &maps, &ksp.mask).unwrap();
        adjoint(&ax, &maps).unwrap().data
    };
    let dot = |a: &Array3<C32>, b: &Array3<C32>| -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re as f64).sum()
    };
    let b = adjoint(&ksp, &maps).unwrap().data;
    let mut xc = Array3::<C32>::zeros(dims);
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    for it in 0..200 {
        let ap = applyop(&p);
        let alpha = (rs / dot(&p, &ap).max(1e-30)) as f32;
        ndarray::Zip::from(&mut xc).and(&p).for_each(|x, &p| *x += p * alpha);
        ndarray::Zip::from(&mut r).and(&ap).for_each(|r, &ap| *r -= ap * alpha);
        let rs_new = dot(&r, &r);
        if it % 20 == 0 { println!("cg iter {it}: res {rs_new:.3e}"); }
        if rs_new < 1e-22 { break; }
        let beta = (rs_new / rs) as f32;
        rs = rs_new;
        ndarray::Zip::from(&mut p).and(&r).for_each(|p, &r| *p = r + *p * beta);
    }

    for (iters, step) in [(400, 0.05f32), (800, 0.05), (1500, 0.08), (2000, 0.05)] {
        let cfg = ReconConfig::new(0.0, iters, step, 1, 0);
        let mut backend = VoxelBackend::zeros(dims);
        let (recon, log) = reconstruct_core(&ksp, &maps, None, &cfg, &mut backend, Vec::new(), Vec::new()).unwrap();
        let num: f64 = recon.data.iter().zip(xc.iter()).map(|(a, b)| (a - b).norm_sqr() as f64).sum();
        let den: f64 = xc.iter().map(|z| z.norm_sqr() as f64).sum();
        println!("iters {iters} step {step}: rel {:.4}, dc first {:.3e} last {:.3e}, viol {}",
            (num / den).sqrt(), log.dc_loss[0], log.dc_loss.last().unwrap(), log.dc_monotonicity_violations);
    }
    let _ = scale_measurements(&ksp, &maps);
}
