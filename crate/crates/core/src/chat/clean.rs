/// Strip CHAT annotation from a main-tier payload.
///
/// Removes media bullets, bracketed codes (a retracing code such as `[/]`
/// or `[//]` also drops the word or `<...>` group it scopes over), angle
/// brackets, `&` fillers, `+` linkers, pause markers, unintelligible-speech
/// placeholders and control characters; then collapses whitespace and
/// lowercases.
pub fn clean_utterance(text: &str) -> String {
    let text = strip_bullets(text);
    let text = bracket_pass(&text);
    let text = text
        .replace("(...)", " ")
        .replace("(..)", " ")
        .replace("(.)", " ");

    let words: Vec<String> = text
        .split_whitespace()
        .filter(|w| !w.starts_with('&') && !w.starts_with('+'))
        .filter(|w| !matches!(w.to_lowercase().as_str(), "xxx" | "yyy" | "www"))
        .map(|w| w.chars().filter(|&c| !is_marker_char(c)).collect::<String>())
        .filter(|w| !w.is_empty())
        .collect();
    words.join(" ").to_lowercase()
}

fn is_marker_char(c: char) -> bool {
    c.is_control() || matches!(c, '\u{2308}'..='\u{230B}' | '‡' | '„' | '↑' | '↓' | '≠' | '⁇')
}

fn strip_bullets(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut inside = false;
    for c in text.chars() {
        if c == '\u{15}' {
            inside = !inside;
            out.push(' ');
        } else if !inside {
            out.push(c);
        }
    }
    out
}

/// Resolve `[...]` codes and `<...>` groups into plain space-separated words.
fn bracket_pass(text: &str) -> String {
    let mut items: Vec<String> = Vec::new();
    let mut word = String::new();
    let mut chars = text.chars();

    fn flush(word: &mut String, items: &mut Vec<String>) {
        if !word.is_empty() {
            items.push(std::mem::take(word));
        }
    }

    while let Some(c) = chars.next() {
        match c {
            '[' => {
                flush(&mut word, &mut items);
                let code: String = chars.by_ref().take_while(|&c| c != ']').collect();
                if code.trim_start().starts_with('/') {
                    items.pop();
                }
            }
            '<' => {
                flush(&mut word, &mut items);
                let mut depth = 1;
                let mut inner = String::new();
                for c in chars.by_ref() {
                    match c {
                        '<' => depth += 1,
                        '>' => {
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                        }
                        _ => {}
                    }
                    inner.push(c);
                }
                let group = bracket_pass(&inner);
                if !group.is_empty() {
                    items.push(group);
                }
            }
            '>' | ']' => flush(&mut word, &mut items),
            c if c.is_whitespace() => flush(&mut word, &mut items),
            c => word.push(c),
        }
    }
    flush(&mut word, &mut items);
    items.join(" ")
}
