use std::collections::{BTreeMap, BTreeSet};

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleSentence {
    pub index: usize,
    pub text: String,
    /// Character offset of the sentence in [`Article::body`].
    pub char_offset: usize,
}

/// A parsed article: paragraph text split into sentences, plus the ids of
/// the tables it contains.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    /// Whitespace-normalized paragraphs joined by `\n`.
    pub body: String,
    pub sentences: Vec<ArticleSentence>,
    pub table_ids: Vec<String>,
    pub table_captions: BTreeMap<String, String>,
}

const STRUCTURAL: [&str; 7] = ["article", "body", "sec", "title", "p", "table-wrap", "caption"];

/// Tokens (lowercased, trailing `.` removed) that end in a period without
/// ending a sentence.
const ABBREVIATIONS: [&str; 24] = [
    "al", "fig", "figs", "eq", "eqs", "e.g", "i.e", "etc", "vs", "tab", "sec", "cf", "resp",
    "approx", "no", "dr", "mr", "ms", "prof", "ref", "refs", "viz", "ca", "et",
];

/// Parses the minimal article schema: `<article id=…>` with `<body>`,
/// `<sec>`/`<p>` text and `<table-wrap id=…><caption>` elements. Section
/// titles are dropped. Other elements are skipped with a warning; their
/// children are still visited.
pub fn parse_article_xml(bytes: &[u8]) -> Result<Article> {
    let mut reader = Reader::from_reader(bytes);
    reader.config_mut().trim_text(false);
    let mut buf = Vec::new();

    let mut stack: Vec<String> = Vec::new();
    let mut article = Article::default();
    let mut paragraphs: Vec<String> = Vec::new();
    let mut current_p: Option<String> = None;
    let mut current_table: Option<String> = None;
    let mut caption: Option<String> = None;
    let mut warned: BTreeSet<String> = BTreeSet::new();
    let mut seen_root = false;

    let xml_err = |reader: &Reader<&[u8]>, e: &dyn std::fmt::Display| Error::Xml {
        offset: reader.error_position().max(reader.buffer_position()),
        message: e.to_string(),
    };

    loop {
        let event = reader.read_event_into(&mut buf).map_err(|e| xml_err(&reader, &e))?;
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let is_empty = matches!(event, Event::Empty(_));
                let name = String::from_utf8_lossy(e.local_name().as_ref()).into_owned();
                if stack.is_empty() {
                    if seen_root {
                        return Err(Error::Schema(format!("second root element <{name}>")));
                    }
                    if name != "article" {
                        return Err(Error::Schema(format!("unknown root element <{name}>")));
                    }
                    seen_root = true;
                    article.id = attr(e, "id").unwrap_or_default();
                } else if current_p.is_none() && caption.is_none() {
                    match name.as_str() {
                        "p" if current_table.is_none() => current_p = Some(String::new()),
                        "table-wrap" => {
                            let id = attr(e, "id").unwrap_or_else(|| format!("table-{}", article.table_ids.len()));
                            article.table_ids.push(id.clone());
                            current_table = Some(id);
                        }
                        "caption" if current_table.is_some() => caption = Some(String::new()),
                        n if STRUCTURAL.contains(&n) => {}
                        n => {
                            if warned.insert(n.to_string()) {
                                log::warn!("article `{}`: ignoring element <{n}>", article.id);
                            }
                        }
                    }
                }
                if is_empty {
                    close(&name, &mut current_p, &mut paragraphs, &mut current_table, &mut caption, &mut article);
                } else {
                    stack.push(name);
                }
            }
            Event::End(_) => {
                let name = stack.pop().unwrap_or_default();
                close(&name, &mut current_p, &mut paragraphs, &mut current_table, &mut caption, &mut article);
            }
            Event::Text(ref t) => {
                let text = t.xml_content().map_err(|e| xml_err(&reader, &e))?;
                push_text(&mut current_p, &mut caption, &text);
            }
            Event::CData(ref t) => {
                let text = t.decode().map_err(|e| xml_err(&reader, &e))?;
                push_text(&mut current_p, &mut caption, &text);
            }
            Event::GeneralRef(ref r) => {
                let resolved = match r.resolve_char_ref().map_err(|e| xml_err(&reader, &e))? {
                    Some(c) => c.to_string(),
                    None => {
                        let name = r.decode().map_err(|e| xml_err(&reader, &e))?;
                        match name.as_ref() {
                            "amp" => "&".into(),
                            "lt" => "<".into(),
                            "gt" => ">".into(),
                            "quot" => "\"".into(),
                            "apos" => "'".into(),
                            other => {
                                return Err(Error::Xml {
                                    offset: reader.buffer_position(),
                                    message: format!("undefined entity &{other};"),
                                })
                            }
                        }
                    }
                };
                push_text(&mut current_p, &mut caption, &resolved);
            }
            Event::Eof => {
                if !stack.is_empty() {
                    return Err(Error::Xml {
                        offset: reader.buffer_position(),
                        message: format!("unexpected end of input inside <{}>", stack.last().unwrap()),
                    });
                }
                if !seen_root {
                    return Err(Error::Xml { offset: reader.buffer_position(), message: "no root element".into() });
                }
                break;
            }
            _ => {}
        }
        buf.clear();
    }

    let mut body = String::new();
    for para in paragraphs.iter().filter(|p| !p.is_empty()) {
        if !body.is_empty() {
            body.push('\n');
        }
        let base = body.chars().count();
        for (start, text) in split_sentences(para) {
            article.sentences.push(ArticleSentence {
                index: article.sentences.len(),
                text,
                char_offset: base + start,
            });
        }
        body.push_str(para);
    }
    article.body = body;
    Ok(article)
}

fn attr(e: &BytesStart, key: &str) -> Option<String> {
    e.try_get_attribute(key).ok().flatten().and_then(|a| a.unescape_value().ok()).map(|v| v.into_owned())
}

fn push_text(p: &mut Option<String>, caption: &mut Option<String>, text: &str) {
    if let Some(buf) = p.as_mut().or(caption.as_mut()) {
        buf.push_str(text);
    }
}

fn close(
    name: &str,
    current_p: &mut Option<String>,
    paragraphs: &mut Vec<String>,
    current_table: &mut Option<String>,
    caption: &mut Option<String>,
    article: &mut Article,
) {
    match name {
        "p" => {
            if let Some(p) = current_p.take() {
                paragraphs.push(normalize_ws(&p));
            }
        }
        "caption" => {
            if let (Some(c), Some(t)) = (caption.take(), current_table.as_ref()) {
                article.table_captions.insert(t.clone(), normalize_ws(&c));
            }
        }
        "table-wrap" => *current_table = None,
        _ => {}
    }
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Rule-based splitter: a sentence ends at `.`, `?` or `!` followed by
/// whitespace and an uppercase letter, unless the period closes a known
/// abbreviation or a single-letter initial. Returns `(char_start, text)`.
pub fn split_sentences(text: &str) -> Vec<(usize, String)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if matches!(c, '.' | '?' | '!') {
            let mut j = i + 1;
            while j < chars.len() && chars[j].is_whitespace() {
                j += 1;
            }
            let boundary = j > i + 1 && j < chars.len() && chars[j].is_uppercase();
            if boundary && !(c == '.' && is_abbreviation(&chars[start..i])) {
                push_sentence(&chars, start, i + 1, &mut out);
                start = j;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    push_sentence(&chars, start, chars.len(), &mut out);
    out
}

fn is_abbreviation(before: &[char]) -> bool {
    let word: String = before
        .iter()
        .rev()
        .take_while(|c| !c.is_whitespace())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    let word = word.trim_start_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
    let single_initial = word.chars().count() == 1 && word.chars().all(char::is_alphabetic);
    single_initial || ABBREVIATIONS.contains(&word.as_str())
}

fn push_sentence(chars: &[char], start: usize, end: usize, out: &mut Vec<(usize, String)>) {
    let slice = &chars[start..end];
    let lead = slice.iter().take_while(|c| c.is_whitespace()).count();
    let text: String = slice[lead..].iter().collect::<String>().trim_end().to_string();
    if !text.is_empty() {
        out.push((start + lead, text));
    }
}
