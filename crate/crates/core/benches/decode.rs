use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mvpose::decoder::{decode, DecodeContext, DecodeOptions, DecoderParams, ModelConfig};
use mvpose::par::Exec;
use mvpose::scenesim::{Dataset, DatasetConfig, SplitSizes};
use mvpose::trainer::grid_queries;

fn bench_decode(c: &mut Criterion) {
    let data = Dataset::generate(&DatasetConfig {
        splits: SplitSizes {
            train: 0,
            val: 0,
            test: 1,
        },
        write_maps: false,
        ..DatasetConfig::default()
    })
    .unwrap();
    let scene = &data.test[0];
    let (maps, _) = data.render(scene);
    let mut group = c.benchmark_group("decode_k256_5cams");
    group.sample_size(10);
    for layers in [1, 4] {
        let cfg = ModelConfig {
            layers,
            ..ModelConfig::desk()
        };
        let params = DecoderParams::init(&cfg, 0).unwrap();
        let ctx = DecodeContext::new(&scene.rig, &maps, &cfg).unwrap();
        let init = grid_queries(&params, scene).unwrap();
        for (name, exec) in [
            ("sequential", Exec::Sequential),
            ("parallel", Exec::Parallel),
        ] {
            let opts = DecodeOptions {
                eps: 0.0,
                exec,
                ..DecodeOptions::default()
            };
            group.bench_with_input(BenchmarkId::new(name, layers), &opts, |b, o| {
                b.iter(|| decode(&init, &ctx, &params, o))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_decode);
criterion_main!(benches);
