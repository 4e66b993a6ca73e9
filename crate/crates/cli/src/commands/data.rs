use anyhow::Result;
use neft_core::channel::sample_dataset;

use crate::config;
use crate::exit::usage;
use crate::output::{check_file_target, Provenance, OUT_DIR_ENV};
use crate::GenDataArgs;

pub fn gen_data(args: GenDataArgs) -> Result<()> {
    let mut cfg = config::load_or_default(args.common.config.as_deref())?;
    let g = &mut cfg.geometry;
    if let Some(v) = args.n1 {
        g.n1 = v;
    }
    if let Some(v) = args.n2 {
        g.n2 = v;
    }
    if let Some(v) = args.freq {
        g.carrier_hz = v;
    }
    if args.spacing.is_some() {
        g.spacing = args.spacing;
    }
    let d = &mut cfg.dataset;
    if let Some(v) = args.count {
        d.count = v;
    }
    if let Some(v) = args.r_lo {
        d.r_lo = v;
    }
    if let Some(v) = args.r_hi {
        d.r_hi = v;
    }
    if let Some(v) = args.seed {
        d.seed = v;
    }
    if let Some(v) = args.dtype {
        d.dtype = v;
    }
    if !(cfg.dataset.r_lo > 0.0 && cfg.dataset.r_hi > cfg.dataset.r_lo) {
        return Err(usage(format!(
            "distance bounds must satisfy 0 < r-lo < r-hi, got r-lo = {} and r-hi = {}",
            cfg.dataset.r_lo, cfg.dataset.r_hi
        )));
    }
    if cfg.dataset.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let geometry = cfg.geometry.build()?;
    let out = args.common.out.or_else(|| cfg.paths.out.clone()).unwrap_or_else(|| {
        std::env::var_os(OUT_DIR_ENV).map(std::path::PathBuf::from).unwrap_or_else(|| "neft-out".into()).join("dataset.bin")
    });
    cfg.paths.out = Some(out.clone());
    check_file_target(&out, args.common.force)?;

    let data = sample_dataset(&geometry, (cfg.dataset.r_lo, cfg.dataset.r_hi), cfg.dataset.count, cfg.dataset.seed)?;
    let provenance = Provenance::new("gen-data", &cfg);
    data.save_with_metadata(&out, cfg.dataset.dtype, serde_json::to_value(&provenance)?)?;

    let n = data.norm;
    println!("rayleigh distance: {:.3} m", geometry.rayleigh_distance()?);
    println!("samples: {} of shape {:?} (seed {})", data.len(), data.input_shape(), data.seed);
    println!("real part range: [{:e}, {:e}]", n.min_real, n.max_real);
    println!("imag part range: [{:e}, {:e}]", n.min_imag, n.max_imag);
    println!("wrote {}", out.display());
    Ok(())
}
