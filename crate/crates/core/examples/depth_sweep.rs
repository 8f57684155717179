use illc_core::compress::{compress_illc, compress_oneshot, Mode};
use illc_core::data::{load_wdbc, split, Standardizer};
use illc_core::metrics::{io_unfaithfulness_global, structural_unfaithfulness};
use illc_core::train::{train, TrainConfig};

fn main() {
    let data = load_wdbc("data/wdbc.csv").unwrap();
    let (train_ds, _) = split(&data, 0.2, 0).unwrap();
    let std = Standardizer::fit(&train_ds).unwrap();
    let full = std.transform_matrix(&data.features).unwrap();
    let train_std = std.transform(&train_ds).unwrap();

    for (label, epochs, lr) in [
        ("barely  e5   lr.01 ", 5usize, 0.01),
        ("light   e20  lr.01 ", 20, 0.01),
        ("mid     e60  lr.005", 60, 0.005),
        ("long    e200 lr.05 ", 200, 0.05),
    ] {
        for layers in [5usize, 20] {
            let mut s_wins = 0;
            let mut io_wins = 0;
            let mut acc_sum = 0.0;
            for seed in [0u64, 1, 2] {
                let config = TrainConfig {
                    hidden_layers: layers,
                    hidden_width: 100,
                    epochs,
                    batch_size: 32,
                    learning_rate: lr,
                    seed,
                    ..TrainConfig::default()
                };
                let run = train(&train_std, &config).unwrap();
                acc_sum += run.log.last().unwrap().accuracy;
                let model = run.model;
                let ill = compress_illc(&model, &full, 0.2, seed, Mode::Global, None).unwrap();
                let one = compress_oneshot(&model, &full, 0.2, seed, Mode::Global, None).unwrap();
                let s_i = structural_unfaithfulness(&model, &ill.compressed, &full, None).unwrap().total;
                let s_o = structural_unfaithfulness(&model, &one.compressed, &full, None).unwrap().total;
                let io_i = io_unfaithfulness_global(&model, &ill.compressed, &full).unwrap().mean;
                let io_o = io_unfaithfulness_global(&model, &one.compressed, &full).unwrap().mean;
                if s_i <= s_o { s_wins += 1; }
                if io_i <= io_o { io_wins += 1; }
            }
            println!("{label} d={layers:2}: structural {s_wins}/3 io {io_wins}/3 (mean acc {:.3})", acc_sum / 3.0);
        }
    }
}
