use owc::imaging::{default_geometry, ChannelFactory};
use owc::models::{build_cae, DimmingTarget};
use owc::rng::{stream, Domain};
use owc::train::{dimming_deviation, finalize_binary, multistage_train, AnnealSchedule, TrainChannel, TrainConfig};

fn main() {
    owc::tune_allocator();
    let t0 = std::time::Instant::now();
    let (geom, cam) = default_geometry();
    let factory = ChannelFactory::new(geom, cam).unwrap();
    let mut rng = stream(1, Domain::Init, 0);
    let mut model = build_cae(64, 5, 28, &mut rng).unwrap();
    let dim = DimmingTarget::uniform_matrix(5, 20.0 / 64.0).unwrap();
    let cfg = TrainConfig::desk_scale(1, 14.0, dim.clone());
    let report = multistage_train(&mut model, &AnnealSchedule::default_seven(), &cfg, TrainChannel::Isc(&factory)).unwrap();
    for r in &report.records {
        println!("stage {} step {} loss {:.4} val_ser {:.4} dim_dev {:.4}", r.stage, r.step, r.loss, r.val_ser, r.dim_dev);
    }
    println!("hardness gap {:.6}", report.final_hardness_gap);
    match finalize_binary(&model) {
        Ok(cb) => {
            let mut set = std::collections::BTreeSet::new();
            for e in &cb.entries {
                set.insert(e.data().iter().map(|&v| if v > 0.5 { '1' } else { '0' }).collect::<String>());
            }
            let dev = dimming_deviation(&cb, &dim).unwrap();
            println!("distinct {} / {}  dim_dev {:.6}", set.len(), cb.m(), dev);
        }
        Err(e) => println!("finalize failed: {e}"),
    }
    println!("wall {:.1} s", t0.elapsed().as_secs_f64());
}
