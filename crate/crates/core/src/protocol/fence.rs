use super::{Diagnostic, ProtocolError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FencedBlock {
    pub tag: Option<String>,
    pub content: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub blocks: Vec<FencedBlock>,
    pub prose_outside: bool,
    pub unterminated: bool,
}

/// Whether prose around the block is an error (branch stages) or a diagnostic (main agent).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strictness {
    Lenient,
    Strict,
}

const FENCE: &str = "```";

// An info string is a language tag only if it looks like one; ```DONE``` style
// one-liners and ```LOAD_SKILL("x") must stay content.
fn is_language_tag(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '+' | '.'))
        && !matches!(s, "WAIT" | "DONE" | "FAIL")
        && !s.starts_with("LOAD_")
}

/// Split `text` into triple-backtick blocks; the language tag is recorded and otherwise ignored.
pub fn extract_blocks(text: &str) -> Extraction {
    let mut out = Extraction::default();
    let mut open: Option<(Option<String>, Vec<&str>)> = None;

    for line in text.lines() {
        match open.as_mut() {
            None => {
                let trimmed = line.trim_start();
                if let Some(rest) = trimmed.strip_prefix(FENCE) {
                    if let Some(end) = rest.find(FENCE) {
                        // single-line block: ```DONE```
                        out.blocks.push(FencedBlock { tag: None, content: rest[..end].trim().to_string() });
                        if !rest[end + FENCE.len()..].trim().is_empty() {
                            out.prose_outside = true;
                        }
                    } else {
                        let info = rest.trim();
                        if info.is_empty() || is_language_tag(info) {
                            open = Some(((!info.is_empty()).then(|| info.to_string()), Vec::new()));
                        } else {
                            open = Some((None, vec![rest]));
                        }
                    }
                } else if !line.trim().is_empty() {
                    out.prose_outside = true;
                }
            }
            Some((_, lines)) => {
                let t = line.trim_end();
                if t.trim_start() == FENCE {
                    let (tag, lines) = open.take().expect("block is open");
                    out.blocks.push(FencedBlock { tag, content: lines.join("\n").trim().to_string() });
                } else if let Some(body) = t.strip_suffix(FENCE) {
                    lines.push(body);
                    let (tag, lines) = open.take().expect("block is open");
                    out.blocks.push(FencedBlock { tag, content: lines.join("\n").trim().to_string() });
                } else {
                    lines.push(line);
                }
            }
        }
    }
    if open.is_some() {
        out.unterminated = true;
    }
    out
}

/// Content of the single code block in `text`.
pub fn single_block(text: &str, strictness: Strictness) -> Result<(String, Vec<Diagnostic>), ProtocolError> {
    let ex = extract_blocks(text);
    if ex.unterminated {
        return Err(ProtocolError::UnterminatedBlock);
    }
    match ex.blocks.len() {
        0 => return Err(ProtocolError::NoCodeBlock),
        1 => {}
        n => return Err(ProtocolError::MultipleCodeBlocks(n)),
    }
    let mut diagnostics = Vec::new();
    if ex.prose_outside {
        match strictness {
            Strictness::Strict => return Err(ProtocolError::ProseOutsideBlock),
            Strictness::Lenient => diagnostics.push(Diagnostic("ignored text outside the code block".into())),
        }
    }
    let block = ex.blocks.into_iter().next().expect("one block");
    if block.content.is_empty() {
        return Err(ProtocolError::EmptyBlock);
    }
    Ok((block.content, diagnostics))
}
