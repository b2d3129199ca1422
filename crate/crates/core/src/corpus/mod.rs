//! Corpus construction from article XML: sentence segmentation, greedy
//! table-sentence alignment, deduplication against the description,
//! entity detection, automatic highlighting and annotator agreement.

mod agreement;
mod align;
mod dedup;
mod highlight;
mod mentions;
mod pipeline;
mod xml;

pub use agreement::{compute_agreement, AgreementReport, PairAnnotation, DEFAULT_SAMPLE_SIZE};
pub use align::{
    content_tokens, greedy_align, greedy_align_all, knowledge_id, overlap_score, stopwords, table_vocabulary,
    AlignParams, STOPWORDS_VERSION,
};
pub use dedup::{dedup_against_description, token_f1};
pub use highlight::auto_highlight;
pub use mentions::{detect_entity_mentions, numeric_hundredths, Mention, MentionKind};
pub use pipeline::{build_pairs, load_articles, read_table_records, BuildParams, TableRecord};
pub use xml::{parse_article_xml, split_sentences, Article, ArticleSentence};
