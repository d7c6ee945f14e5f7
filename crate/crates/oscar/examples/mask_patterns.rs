//! Render the four attention-interaction patterns for a small triple
//! layout: full, seq2seq (causal captions, no back-flow from tags or
//! regions into the caption), and the two partial variants.
//!
//! ```bash
//! cargo run --release --example mask_patterns
//! ```

use oscar::corpus::triple::TripleLayout;
use oscar::model::mask::{build_mask, MaskKind};

fn show(kind: MaskKind, name: &str, layout: &TripleLayout) {
    let mask = build_mask(kind, layout);
    println!("{name}:");
    print!("      ");
    for k in 0..mask.size() {
        print!("{}", seg_char(layout, k));
    }
    println!();
    for q in 0..mask.size() {
        print!("  {} {q:>2} ", seg_char(layout, q));
        for k in 0..mask.size() {
            print!("{}", if mask.allows(q, k) { '#' } else { '.' });
        }
        println!();
    }
    println!();
}

fn seg_char(layout: &TripleLayout, pos: usize) -> char {
    if layout.words.contains(&pos) {
        'w'
    } else if layout.tags.contains(&pos) {
        'q'
    } else {
        'v'
    }
}

fn main() {
    // [CLS] w w w [SEP] | q q [SEP] | v v
    let layout = TripleLayout {
        words: 0..5,
        tags: 5..8,
        regions: 8..10,
    };
    println!("rows are queries, columns are keys; # = may attend\n");
    show(MaskKind::Full, "full (pre-training default)", &layout);
    show(MaskKind::Seq2Seq, "seq2seq (caption generation)", &layout);
    show(
        MaskKind::partial_words_regions(),
        "partial w-v (tags masked out)",
        &layout,
    );
    show(
        MaskKind::partial_tags_regions(),
        "partial q-v (words masked out)",
        &layout,
    );
}
