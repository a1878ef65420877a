//! Reconstruction quality and analytic complexity accounting.
//!
//! Convolution cost is approximated per layer as
//! `H * W * n_out * (2 * n_in * k^2 + 2)` at the layer's output
//! resolution. Warping and resampling are not counted.

use std::fmt::Write as _;

use serde::Serialize;

pub use crate::arch::{ArchitectureSpec, LayerDescriptor};
use crate::error::{Error, Result};

/// PSNR reported for identical inputs.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Peak signal-to-noise ratio in dB for signals with peak value 1,
/// capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "psnr: lengths {} and {} must match and be nonzero",
            a.len(),
            b.len()
        )));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

/// FLOPs of one convolution producing `n_out` maps of `h x w`.
pub fn conv_flops(h: usize, w: usize, n_in: usize, n_out: usize, kernel: usize) -> u64 {
    (h * w * n_out) as u64 * (2 * n_in * kernel * kernel + 2) as u64
}

pub fn conv_params(n_in: usize, n_out: usize, kernel: usize) -> u64 {
    (n_out * n_in * kernel * kernel + n_out) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModuleCost {
    pub module: String,
    pub flops: u64,
    pub params: u64,
    pub layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub height: usize,
    pub width: usize,
    pub total_flops: u64,
    pub total_params: u64,
    pub modules: Vec<ModuleCost>,
}

/// Generator parameter count including biases.
pub fn count_params(spec: &ArchitectureSpec) -> u64 {
    spec.generator_layers()
        .iter()
        .map(|l| conv_params(l.n_in, l.n_out, l.kernel))
        .sum()
}

/// Discriminator parameters: convolutions, batch-norm scale/shift and the head.
pub fn count_discriminator_params(spec: &ArchitectureSpec) -> u64 {
    let layers = spec.discriminator_layers();
    if layers.is_empty() {
        return 0;
    }
    let conv: u64 = layers.iter().map(|l| conv_params(l.n_in, l.n_out, l.kernel)).sum();
    let bn: u64 = layers[1..].iter().map(|l| 2 * l.n_out as u64).sum();
    let head = layers.last().map_or(0, |l| l.n_out as u64 + 1);
    conv + bn + head
}

/// Sums the convolution cost over every layer for an `height x width` frame.
pub fn count_flops(spec: &ArchitectureSpec, height: usize, width: usize) -> Result<ComplexityReport> {
    spec.validate()?;
    let m = spec.size_multiple();
    // padded to the pyramid's size multiple, as inference does
    let (h, w) = (height.div_ceil(m) * m, width.div_ceil(m) * m);
    let mut modules: Vec<ModuleCost> = Vec::new();
    let mut add = |l: &LayerDescriptor, params: u64| {
        if h % l.divisor != 0 || w % l.divisor != 0 {
            return Err(Error::Config(format!(
                "layer of `{}` at 1/{} resolution does not tile a {h}x{w} frame",
                l.module, l.divisor
            )));
        }
        let flops = conv_flops(h / l.divisor, w / l.divisor, l.n_in, l.n_out, l.kernel);
        match modules.iter_mut().find(|m| m.module == l.module) {
            Some(m) => {
                m.flops += flops;
                m.params += params;
                m.layers += 1;
            }
            None => modules.push(ModuleCost { module: l.module.clone(), flops, params, layers: 1 }),
        }
        Ok(())
    };
    for l in spec.generator_layers() {
        add(&l, conv_params(l.n_in, l.n_out, l.kernel))?;
    }
    let disc = spec.discriminator_layers();
    for (i, l) in disc.iter().enumerate() {
        let mut p = conv_params(l.n_in, l.n_out, l.kernel);
        if i > 0 {
            p += 2 * l.n_out as u64;
        }
        if i + 1 == disc.len() {
            p += l.n_out as u64 + 1;
        }
        add(l, p)?;
    }
    Ok(ComplexityReport {
        height,
        width,
        total_flops: modules.iter().map(|m| m.flops).sum(),
        total_params: modules.iter().map(|m| m.params).sum(),
        modules,
    })
}

fn si(v: u64) -> String {
    let v = v as f64;
    if v >= 1e9 {
        format!("{:.2}G", v / 1e9)
    } else if v >= 1e6 {
        format!("{:.2}M", v / 1e6)
    } else if v >= 1e3 {
        format!("{:.1}k", v / 1e3)
    } else {
        format!("{v}")
    }
}

impl ComplexityReport {
    /// Plain-text table: one row per module plus a total row.
    pub fn table(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{title} @ {}x{}", self.height, self.width);
        let _ = writeln!(s, "{:<16} {:>7} {:>12} {:>10}", "Module", "Layers", "Parameters", "FLOPs");
        let _ = writeln!(s, "{}", "-".repeat(48));
        for m in &self.modules {
            let _ = writeln!(s, "{:<16} {:>7} {:>12} {:>10}", m.module, m.layers, m.params, si(m.flops));
        }
        let _ = writeln!(s, "{}", "-".repeat(48));
        let layers: usize = self.modules.iter().map(|m| m.layers).sum();
        let _ = writeln!(
            s,
            "{:<16} {:>7} {:>12} {:>10}",
            "total",
            layers,
            self.total_params,
            si(self.total_flops)
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_values() {
        let a = vec![0.3; 10];
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let b = vec![0.4; 10];
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = vec![0.31; 10];
        assert!((psnr(&a, &c).unwrap() - 40.0).abs() < 1e-9);
        assert!(psnr(&a, &[0.0]).is_err());
    }

    #[test]
    fn block_costs_by_hand() {
        // 6->32: 6*32*9+32, then 4 x (32*32*9+32), then 32*3*9+3
        assert_eq!(count_params(&ArchitectureSpec::ms()), 39_619 + 2 * 40_483);
    }

    #[test]
    fn report_totals_are_sums() {
        let r = count_flops(&ArchitectureSpec::ms_refine(), 360, 640).unwrap();
        assert_eq!(r.total_flops, r.modules.iter().map(|m| m.flops).sum::<u64>());
        assert_eq!(r.total_params, 161_068);
        assert_eq!(r.modules.len(), 4);
        assert!(r.table("MS + refine").contains("refine"));
    }

    #[test]
    fn discriminator_accounting() {
        let mut spec = ArchitectureSpec::ms();
        spec.discriminator = Some(Default::default());
        let r = count_flops(&spec, 128, 128).unwrap();
        let d = r.modules.iter().find(|m| m.module == "discriminator").unwrap();
        assert_eq!(d.layers, 9);
        assert_eq!(d.params, count_discriminator_params(&spec));
    }
}
