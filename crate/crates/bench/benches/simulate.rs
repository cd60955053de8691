use criterion::{criterion_group, criterion_main, Criterion};
use qpl_core::scenario::{resolve, DesignConfig, ScenarioConfig};
use qpl_core::sim::run_resolved;
use qpl_core::{InitialInput, InputHold, Mode, PlantChoice, QuantizerSpec};

fn config(mode: Mode) -> ScenarioConfig {
    ScenarioConfig {
        name: "bench".into(),
        plant: PlantChoice::builtin("scalar_linear").unwrap(),
        delay: 1.0,
        quantizer: QuantizerSpec::new(10.0, 5e-5, 5e-8).unwrap(),
        design: DesignConfig {
            lambda: Some(8.0),
            eps: Some(0.1),
            nu: Some(0.1),
            delta: Some(0.05),
            mu0: 1.0,
            tau: 1.0,
        },
        grid_n: 100,
        horizon: 10.0,
        x0: vec![3.0],
        u0: InitialInput::Random {
            amplitude: 2.0,
            pieces: 3,
        },
        mode,
        seed: 1,
        record_stride: 1,
        snapshot_stride: 0,
        diagnostics_stride: 10,
        input_hold: InputHold::Linear,
    }
}

fn simulate(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate");
    group.sample_size(10);
    for mode in [Mode::Nominal, Mode::StateQ, Mode::InputQ] {
        let resolved = resolve(&config(mode)).unwrap();
        group.bench_function(mode.as_str(), |b| b.iter(|| run_resolved(&resolved).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, simulate);
criterion_main!(benches);
