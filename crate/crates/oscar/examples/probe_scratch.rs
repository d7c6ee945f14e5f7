use oscar::corpus::TagMode;
use oscar::harness::runconfig::{RunConfig, RunMode};
use oscar::harness::train::{train_retrieval_with_init, train_text_mtl};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.008);
    let steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2000);
    println!("lr {lr} steps {steps}");
    let base = RunConfig {
        mode: RunMode::FinetuneRetrieval,
        seed: Some(1),
        steps,
        lr,
        eval_interval: 100,
        neg_ratio: 3,
        corpus_size: 1024,
        eval_size: 20,
        ..RunConfig::default()
    };
    let init = train_text_mtl(&base, 800, 1).unwrap();
    for tm in ["groundtruth", "predicted", "none"] {
        let cfg = RunConfig {
            tag_mode: TagMode::parse(tm).unwrap(),
            ..base.clone()
        };
        let (_, log) = train_retrieval_with_init(&cfg, Some(0.8), Some(&init)).unwrap();
        print!("{tm}: first>=0.8 {:?} |", log.first_step_reaching("r_at_1", 0.8));
        for r in log.rows() {
            print!(" {}:{:.2}", r.step, r.metric_value);
        }
        println!();
    }
}
