//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 usage error.

use crate::corpus::{save_corpus, TagMode};
use crate::error::Error;
use crate::harness::ablation::run_ablation;
use crate::harness::export::{export_features, region_tag_alignment, save_features};
use crate::harness::runconfig::{RunConfig, RunMode};
use crate::harness::train::{
    eval_caption, eval_nlvr, eval_pretrain, eval_retrieval, eval_vqa, prepare, train_caption,
    train_nlvr, train_pretrain, train_retrieval, train_vqa,
};
use crate::model::checkpoint::load_checkpoint;

const USAGE: &str = "usage: oscar <subcommand> [--flag value ...]

subcommands:
  gen-corpus          write a synthetic corpus (--out) and vocabulary (--vocab)
  pretrain            joint masked-token + contrastive training (--seed required)
  finetune-retrieval  binary alignment fine-tuning (--seed required)
  finetune-caption    seq2seq caption fine-tuning (--seed required)
  finetune-vqa        answer-classification fine-tuning (--seed required)
  finetune-nlvr       paired-image reasoning fine-tuning (--seed required)
  eval                evaluate a checkpoint (--init-from, --task <mode>)
  generate            beam-search captions for the held-out set (--init-from)
  ablate              steps-to-threshold grid over --tag-modes x --seeds
  export-features     last-layer feature CSV for a checkpoint (--init-from, --out)

common flags mirror config-file keys: --steps --batch --lr --seed
--world-seed --corpus-seed --corpus-size --eval-size --eval-interval
--warmup --weight-decay --clip-norm --mask-rate --pollute-rate
--mask-scheme --max-masked --neg-ratio --beam --max-len --qa-loss
--hidden --layers --heads --tag-mode --mask --corpus --vocab --init-from
--checkpoint-out --checkpoint-interval --log --out --threshold
--tag-modes --seeds --threads --config <file>";

pub fn run(args: Vec<String>) -> i32 {
    match dispatch(&args) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("{USAGE}");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other),
        }
    }
}

fn dispatch(args: &[String]) -> std::result::Result<(), CliError> {
    let Some(sub) = args.first() else {
        return Err(CliError::Usage("missing subcommand".into()));
    };
    let rest = &args[1..];
    match sub.as_str() {
        "gen-corpus" => gen_corpus(rest),
        "pretrain" => train(RunMode::Pretrain, rest),
        "finetune-retrieval" => train(RunMode::FinetuneRetrieval, rest),
        "finetune-caption" => train(RunMode::FinetuneCaption, rest),
        "finetune-vqa" => train(RunMode::FinetuneVqa, rest),
        "finetune-nlvr" => train(RunMode::FinetuneNlvr, rest),
        "eval" => eval(rest),
        "generate" => generate(rest),
        "ablate" => ablate(rest),
        "export-features" => export(rest),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(())
        }
        other => Err(CliError::Usage(format!("unknown subcommand {other:?}"))),
    }
}

fn gen_corpus(args: &[String]) -> std::result::Result<(), CliError> {
    let cfg = RunConfig::from_flags(RunMode::Pretrain, args)?;
    let out = cfg
        .out_path
        .clone()
        .ok_or_else(|| CliError::Usage("gen-corpus needs --out <path>".into()))?;
    let prep = prepare(&cfg).map_err(runtime)?;
    let triples = prep.train.to_triples();
    save_corpus(&triples, &out).map_err(runtime)?;
    if let Some(vocab_path) = &cfg.vocab_path {
        prep.vocab.save(vocab_path).map_err(runtime)?;
    }
    println!(
        "wrote {} triples (tag mode {}) to {}",
        triples.len(),
        cfg.tag_mode.name(),
        out.display()
    );
    Ok(())
}

fn train(mode: RunMode, args: &[String]) -> std::result::Result<(), CliError> {
    let cfg = RunConfig::from_flags(mode, args)?;
    cfg.require_seed()?;
    let (_, log) = match mode {
        RunMode::Pretrain => train_pretrain(&cfg).map_err(runtime)?,
        RunMode::FinetuneRetrieval => train_retrieval(&cfg, None).map_err(runtime)?,
        RunMode::FinetuneCaption => train_caption(&cfg).map_err(runtime)?,
        RunMode::FinetuneVqa => train_vqa(&cfg).map_err(runtime)?,
        RunMode::FinetuneNlvr => train_nlvr(&cfg).map_err(runtime)?,
    };
    print!("{}", log.to_csv());
    if let Some(path) = &cfg.log_path {
        log.save(path).map_err(runtime)?;
    }
    Ok(())
}

fn eval(args: &[String]) -> std::result::Result<(), CliError> {
    // --task names the metric family; defaults to pretrain losses
    let mut task = "pretrain".to_string();
    let mut filtered = Vec::new();
    let mut i = 0;
    while i < args.len() {
        if args[i] == "--task" {
            task = args
                .get(i + 1)
                .ok_or_else(|| CliError::Usage("--task needs a value".into()))?
                .clone();
            i += 2;
        } else {
            filtered.push(args[i].clone());
            i += 1;
        }
    }
    let cfg = RunConfig::from_flags(RunMode::Pretrain, &filtered)?;
    let ckpt = cfg
        .init_from
        .clone()
        .ok_or_else(|| CliError::Usage("eval needs --init-from <checkpoint>".into()))?;
    let weights = load_checkpoint(&ckpt).map_err(runtime)?;
    let prep = prepare(&cfg).map_err(runtime)?;
    match task.as_str() {
        "pretrain" => {
            let donors: Vec<Vec<usize>> = prep
                .train
                .items
                .iter()
                .map(|i| i.triple.tag_ids.clone())
                .collect();
            let seed = cfg.seed.unwrap_or(0);
            let (mtl, lc, acc) = eval_pretrain(&weights, &prep.heldout, &donors, &cfg, seed)
                .map_err(runtime)?;
            println!("loss_mtl,{mtl}");
            println!("loss_c,{lc}");
            println!("pollution_acc,{acc}");
        }
        "retrieval" => {
            let r1 = eval_retrieval(&weights, &prep.heldout, cfg.threads).map_err(runtime)?;
            println!("r_at_1,{r1}");
        }
        "caption" => {
            let bleu = eval_caption(&weights, &prep.heldout, &prep.vocab, &cfg).map_err(runtime)?;
            println!("bleu4,{bleu}");
        }
        "vqa" => {
            let samples = crate::harness::train::qa_eval_set(&prep, &cfg).map_err(runtime)?;
            let acc = eval_vqa(&weights, &samples).map_err(runtime)?;
            println!("accuracy,{acc}");
        }
        "nlvr" => {
            let samples = crate::harness::train::nlvr_eval_set(&prep, &cfg).map_err(runtime)?;
            let acc = eval_nlvr(&weights, &samples).map_err(runtime)?;
            println!("accuracy,{acc}");
        }
        other => return Err(CliError::Usage(format!("unknown eval task {other:?}"))),
    }
    Ok(())
}

fn generate(args: &[String]) -> std::result::Result<(), CliError> {
    let cfg = RunConfig::from_flags(RunMode::FinetuneCaption, args)?;
    let ckpt = cfg
        .init_from
        .clone()
        .ok_or_else(|| CliError::Usage("generate needs --init-from <checkpoint>".into()))?;
    let weights = load_checkpoint(&ckpt).map_err(runtime)?;
    let prep = prepare(&cfg).map_err(runtime)?;
    let mut lines = String::new();
    for item in &prep.heldout.items {
        let ids = crate::finetune::generate_caption(
            &weights,
            &item.triple.tag_ids,
            &item.triple.region_vecs,
            cfg.beam_size,
            cfg.max_len,
        )
        .map_err(runtime)?;
        let tokens = prep.vocab.decode(&ids).map_err(runtime)?;
        lines.push_str(&tokens.join(" "));
        lines.push('\n');
    }
    match &cfg.out_path {
        Some(path) => std::fs::write(path, &lines).map_err(|e| runtime(Error::Io(e)))?,
        None => print!("{lines}"),
    }
    Ok(())
}

fn ablate(args: &[String]) -> std::result::Result<(), CliError> {
    let cfg = RunConfig::from_flags(RunMode::FinetuneRetrieval, args)?;
    if cfg.tag_modes.len() < 2 {
        return Err(CliError::Usage("ablate needs >= 2 --tag-modes".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(CliError::Usage("ablate needs --seeds".into()));
    }
    let tag_modes: Vec<TagMode> = cfg.tag_modes.clone();
    let seeds = cfg.seeds.clone();
    let report = run_ablation(&cfg, &tag_modes, &seeds, cfg.threshold).map_err(runtime)?;
    let csv = report.to_csv();
    print!("{csv}");
    if let Some(path) = &cfg.log_path {
        std::fs::write(path, &csv).map_err(|e| runtime(Error::Io(e)))?;
    }
    Ok(())
}

fn export(args: &[String]) -> std::result::Result<(), CliError> {
    let cfg = RunConfig::from_flags(RunMode::Pretrain, args)?;
    let ckpt = cfg
        .init_from
        .clone()
        .ok_or_else(|| CliError::Usage("export-features needs --init-from <checkpoint>".into()))?;
    let out = cfg
        .out_path
        .clone()
        .ok_or_else(|| CliError::Usage("export-features needs --out <path>".into()))?;
    let weights = load_checkpoint(&ckpt).map_err(runtime)?;
    let prep = prepare(&cfg).map_err(runtime)?;
    let rows = export_features(&weights, &prep.heldout.items, &prep.world, &prep.vocab)
        .map_err(runtime)?;
    save_features(&rows, &out).map_err(runtime)?;
    if let Some(a) = region_tag_alignment(&rows) {
        println!("region_tag_alignment,{a}");
    }
    println!("wrote {} feature rows to {}", rows.len(), out.display());
    Ok(())
}

fn runtime(e: Error) -> CliError {
    CliError::Runtime(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_subcommand_exits_2() {
        assert_eq!(run(vec!["frobnicate".into()]), 2);
        assert_eq!(run(vec![]), 2);
    }

    #[test]
    fn train_without_seed_exits_2() {
        assert_eq!(run(vec!["pretrain".into()]), 2);
    }

    #[test]
    fn zero_step_pretrain_writes_checkpoint_and_exits_0() {
        let dir = std::env::temp_dir().join("oscar_cli_test");
        std::fs::create_dir_all(&dir).unwrap();
        let ckpt = dir.join("init.osck");
        let code = run(vec![
            "pretrain".into(),
            "--steps".into(),
            "0".into(),
            "--seed".into(),
            "1".into(),
            "--corpus-size".into(),
            "8".into(),
            "--eval-size".into(),
            "4".into(),
            "--hidden".into(),
            "16".into(),
            "--layers".into(),
            "1".into(),
            "--heads".into(),
            "2".into(),
            "--checkpoint-out".into(),
            ckpt.to_str().unwrap().into(),
        ]);
        assert_eq!(code, 0);
        assert!(ckpt.exists());
        assert!(load_checkpoint(&ckpt).is_ok());
        std::fs::remove_dir_all(&dir).ok();
    }
}
