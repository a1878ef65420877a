//! Bilinear warping against brute-force shifts, and the midpoint of a
//! linearly moving ramp.

use midframe::synthesis::synthesize;
use midframe::tensor::{warp, FlowScale, Tensor};

fn ramp(h: usize, w: usize, offset: f64) -> Tensor {
    let data = (0..h * w).map(|i| (i % w) as f64 + offset).collect();
    Tensor::new(&[1, 1, h, w], data).expect("sized")
}

fn flow(h: usize, w: usize, u: f64, v: f64) -> Tensor {
    let mut d = vec![u; h * w];
    d.extend(std::iter::repeat_n(v, h * w));
    Tensor::new(&[1, 2, h, w], d).expect("sized")
}

fn main() -> midframe::Result<()> {
    let (h, w) = (4, 8);
    let px = FlowScale::uniform(1.0);
    let image = ramp(h, w, 0.0);
    for u in [1.0, 0.5, -0.25] {
        let out = warp(&image, &flow(h, w, u, 0.0), px)?;
        let row: Vec<String> = out.data()[w..2 * w].iter().map(|v| format!("{v:5.2}")).collect();
        println!("u = {u:+.2}: {}", row.join(" "));
    }

    // content moving 2 px right: the middle frame is the first shifted by 1 px
    let first = ramp(h, w, 0.0);
    let last = ramp(h, w, -2.0);
    let mut features = flow(h, w, 1.0, 0.0).to_vec();
    features.extend(std::iter::repeat_n(0.0, h * w));
    let features = Tensor::new(&[1, 3, h, w], features)?;
    let mid = synthesize(&first, &last, &features, px)?;
    let row: Vec<String> = mid.data()[w..2 * w].iter().map(|v| format!("{v:5.2}")).collect();
    println!("midpoint:  {}", row.join(" "));
    Ok(())
}
