//! Fixtures shared by the criterion benches.

use dsgtf::data::{TaskLabel, WindowedSegment};
use dsgtf::model::ModelConfig;
use dsgtf::sensor_graph::{Channel, SensorLayout};
use dsgtf::Tensor;

/// `n` sensors spread over the unit sphere.
pub fn sphere_layout(n: usize) -> SensorLayout {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    SensorLayout::new(
        (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let a = golden * i as f64;
                Channel::new(format!("A{:03}", i + 1), [r * a.cos(), y, r * a.sin()])
            })
            .collect(),
    )
    .expect("distinct channel ids")
}

/// A deterministic normalized segment matching `config`.
pub fn segment(config: &ModelConfig) -> WindowedSegment {
    let (c, d) = (config.channels, config.segment_len);
    let data = (0..c * d)
        .map(|i| ((i % d) as f64 * 0.07 * (1 + i / d) as f64).sin())
        .collect();
    let raw = Tensor::new(vec![c, d], data).expect("shape");
    WindowedSegment::from_raw("S01", TaskLabel::Motor, &raw, config.window).expect("window divides segment")
}
