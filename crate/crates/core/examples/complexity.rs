//! FLOPs and parameter counts of the three architectures at 360x640,
//! cross-checked against instantiated networks.

use midframe::layers::Parameterized;
use midframe::metrics::{count_flops, count_params};
use midframe::{ArchitectureSpec, Generator};

fn main() -> midframe::Result<()> {
    let ms = count_flops(&ArchitectureSpec::ms(), 360, 640)?.total_flops as f64;
    for name in ["ms", "ms-refine", "baseline"] {
        let spec = ArchitectureSpec::by_name(name)?;
        let report = count_flops(&spec, 360, 640)?;
        println!("{}", report.table(name));
        let built = Generator::new(spec.clone(), 0)?.param_count();
        println!("instantiated parameters: {built} (analytic {})", count_params(&spec));
        println!("FLOPs relative to ms: x{:.2}\n", report.total_flops as f64 / ms);
    }
    Ok(())
}
