// temporary probe: acceptance-shaped round-trip
use pleno_core::calib::{optimize, synthetic_centers, CalibrationState, OptimizeOptions};
use pleno_core::calib::evaluate;
use pleno_core::model::BapFeature;
use pleno_core::rng::Rng;
use pleno_core::simulate::{generate_checkerboard_observations, CheckerboardModel, PoseSampler};

use pleno_core::model::{CameraParams, Distortion, LensConfiguration, MainLens, MlaGeometry, Sensor};

fn truth_camera() -> CameraParams {
    CameraParams {
        main_lens: MainLens {
            focal: 50.0,
            fnumber: 4.0,
            u0: 519.5,
            v0: 399.5,
            distortion: Distortion {
                radial: [0.7694, -8.4669, 164.645],
                tangential: [-0.000113, -0.000557],
            },
        },
        sensor: Sensor { pixel_size: 0.0055, width: 1040, height: 800, d: 0.31863244257046264 },
        mla: MlaGeometry {
            rotation: [0.000548, 0.000853, -0.0011339],
            tx: -0.0954,
            ty: -0.147,
            big_d: 56.65763680237484,
            pitch: 0.1274531794822808,
            nk: 44,
            nl: 38,
            type_count: 3,
        },
        micro_focals: vec![0.5779208298808867, 0.5042528883479617, 0.5514441994009651],
        configuration: LensConfiguration::Keplerian,
    }
}

fn main() {
    let truth = truth_camera();
    let board = CheckerboardModel { rows: 5, cols: 9, square_size: 3.0 };
    let mut ok = 0;
    for seed in 0..20u64 {
        let mut rng = Rng::from_seed(1000 + seed);
        let mut poses = Vec::new();
        let mut features: Vec<BapFeature> = Vec::new();
        let sampler = PoseSampler::default();
        while poses.len() < 12 {
            let pose = sampler.sample(&mut rng);
            let Ok(obs) = generate_checkerboard_observations(&truth, &pose, &board, 0.0, &mut rng)
            else { continue; };
            if obs.len() < 60 { continue; }
            let f = poses.len();
            features.extend(obs.iter().map(|o| BapFeature {
                frame: f, cluster: o.corner, k: o.k, l: o.l,
                lens_type: truth.mla.lens_type(o.k, o.l),
                u: o.u, v: o.v, rho: o.rho_true,
            }));
            poses.push(pose);
        }
        let centers = synthetic_centers(&truth);
        let mut prng = Rng::from_seed(seed * 7 + 3);
        let x: Vec<f64> = truth.to_vec().iter()
            .map(|v| v * (1.0 + 0.05 * 2.0 * (prng.uniform() - 0.5)))
            .collect();
        let start = CalibrationState { params: truth.with_vec(&x), poses: poses.clone() };
        let t0 = std::time::Instant::now();
        let r = optimize(&start, &board, &features, &centers, &OptimizeOptions::default());
        let dt = t0.elapsed().as_secs_f64();
        match r {
            Ok((refined, summary)) => {
                let b = evaluate(&refined, &board, &features, &centers).unwrap();
                let rmse = ((b.uv_sq + b.rho_sq) / (3.0 * b.feature_count as f64)).sqrt();
                let rel = |a: f64, t: f64| (a - t).abs() / t.abs();
                let worst = [
                    rel(refined.params.main_lens.focal, truth.main_lens.focal),
                    rel(refined.params.mla.big_d, truth.mla.big_d),
                    rel(refined.params.sensor.d, truth.sensor.d),
                    rel(refined.params.mla.pitch, truth.mla.pitch),
                    rel(refined.params.micro_focals[0], truth.micro_focals[0]),
                    rel(refined.params.micro_focals[1], truth.micro_focals[1]),
                    rel(refined.params.micro_focals[2], truth.micro_focals[2]),
                ].into_iter().fold(0.0f64, f64::max);
                if worst > 1e-3 {
                    let names = ["F","u0","v0","k1","k2","k3","p1","p2","d","rx","ry","rz","tx","ty","D","pitch","f1","f2","f3"];
                    let xs = refined.params.to_vec();
                    let ts = truth.to_vec();
                    let rels: Vec<String> = names.iter().zip(xs.iter().zip(&ts))
                        .map(|(n, (a, t))| format!("{n} {:.2e}", (a - t).abs() / t.abs().max(1e-12)))
                        .collect();
                    println!("    rels: {}", rels.join(" "));
                }
                let pass = summary.converged && worst < 1e-3 && rmse < 1e-6;
                if pass { ok += 1; }
                println!("seed {seed:2} conv {} iters {:3} rmse {:9.3e} worst_rel {:9.3e} dt {:5.1}s {}",
                    summary.converged, summary.iterations, rmse, worst, dt, if pass {"PASS"} else {"FAIL"});
            }
            Err(e) => println!("seed {seed:2} error {e:?} dt {dt:.1}s"),
        }
    }
    println!("{ok}/20");
}
