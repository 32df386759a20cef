//! Desk-scale end-to-end run on one synthetic cohort:
//! `cargo run --release --example e2e -- topology|lesion|mixed [work_dir]`.

use std::time::Instant;

use localglobal::config::PipelineConfig;
use localglobal::pipeline::Pipeline;
use localglobal::synth::{generate_cohort, LesionSpec, PhantomSpec, TopologySpec, MANIFEST_NAME};

fn main() -> localglobal::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let kind = args.get(1).map_or("topology", String::as_str);
    let root = std::path::PathBuf::from(args.get(2).map_or("/tmp/e2e", String::as_str)).join(kind);
    let lesion = |delta| LesionSpec { patch: [2, 3, 2], patch_dims: [10, 12, 10], delta, radius: 3.5 };
    let topo = |counts| TopologySpec { kind: Default::default(), counts, radius: [2.0, 3.0], tube_radius: 1.5 };
    let mut spec = PhantomSpec { images_per_subject: [1, 2], seed: 7, ..PhantomSpec::default() };
    match kind {
        "topology" => spec.topology = Some(topo([1, 4])),
        "lesion" => spec.lesion = Some(lesion(0.15)),
        _ => {
            spec.topology = Some(topo([2, 3]));
            spec.lesion = Some(lesion(0.06));
        }
    }
    let t = Instant::now();
    generate_cohort(&spec, &root.join("data"))?;
    eprintln!("synth {:?}", t.elapsed());
    let mut cfg: PipelineConfig = serde_json::from_str(include_str!("e2e_config.json"))?;
    cfg.paths.manifest = Some(root.join("data").join(MANIFEST_NAME));
    cfg.paths.work_dir = root.join("work");
    let p = Pipeline::new(cfg, 0)?.with_log(false);
    for (name, f) in [
        ("preprocess", &(|p: &Pipeline| p.preprocess().map(drop)) as &dyn Fn(&Pipeline) -> localglobal::Result<()>),
        ("ph", &|p: &Pipeline| p.pi().map(drop)),
        ("train-pi", &|p: &Pipeline| p.train_pi().map(drop)),
        ("patches", &|p: &Pipeline| p.patches().map(drop)),
        ("train-patch", &|p: &Pipeline| p.train_all_patches().map(drop)),
    ] {
        let t = Instant::now();
        f(&p)?;
        eprintln!("{name} {:?}", t.elapsed());
    }
    let t = Instant::now();
    let r = p.evaluate()?;
    eprintln!("ensembles+evaluate {:?}", t.elapsed());
    for m in &r.models {
        println!("{:<20} auc {:.3}±{:.3} aps {:.3}±{:.3}", m.model, m.report.mean.auc, m.report.sd.auc, m.report.mean.aps, m.report.sd.aps);
    }
    let mut best: Vec<(usize, f64)> = r.patch_mean_auc.iter().copied().enumerate().collect();
    best.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("p_star {:?} top patches {:?}", r.p_star, &best[..5]);
    Ok(())
}
