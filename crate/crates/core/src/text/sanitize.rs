//! Normalizes raw source output into plain, bounded-length text.

use std::sync::OnceLock;

use regex::Regex;

use super::TextError;

/// Characters treated as markup-structure markers and dropped outright.
const MARKUP_MARKERS: [char; 4] = ['`', '*', '#', '|'];

fn boilerplate_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        // Leading clause of the form "<name> is a Windows API ...", dropped
        // through its sentence terminator.
        Regex::new(r"^\S+ is an? Windows API\b[^.]*(\.\s*|$)").expect("static regex")
    })
}

/// Replaces control characters with spaces, strips markup markers, removes the
/// leading "<name> is a Windows API ..." boilerplate clause when present,
/// collapses whitespace, and truncates to `limit_words` words.
pub fn sanitize_text(raw: &str, limit_words: usize) -> Result<String, TextError> {
    if limit_words == 0 {
        return Err(TextError::InvalidWordLimit);
    }
    let cleaned: String = raw
        .chars()
        .map(|c| if c.is_control() { ' ' } else { c })
        .filter(|c| !MARKUP_MARKERS.contains(c))
        .collect();
    let collapsed = cleaned.split_whitespace().collect::<Vec<_>>().join(" ");
    let without_boilerplate = boilerplate_re().replace(&collapsed, "");
    let words: Vec<&str> = without_boilerplate
        .split_whitespace()
        .take(limit_words)
        .collect();
    if words.is_empty() {
        return Err(TextError::EmptyAfterSanitation {
            api: String::new(),
        });
    }
    Ok(words.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_characters_become_single_spaces() {
        assert_eq!(sanitize_text("A\nB\tC", 100).unwrap(), "A B C");
        assert_eq!(sanitize_text("A\r\n\r\nB", 100).unwrap(), "A B");
        assert_eq!(sanitize_text("A\u{0}B", 100).unwrap(), "A B");
    }

    #[test]
    fn truncates_to_exact_word_limit() {
        let long: String = (0..150).map(|i| format!("w{i} ")).collect();
        let out = sanitize_text(&long, 100).unwrap();
        assert_eq!(out.split_whitespace().count(), 100);
        assert!(out.ends_with("w99"));
    }

    #[test]
    fn strips_leading_windows_api_boilerplate() {
        let raw = "CreateProcessA is a Windows API sequence. It spawns a new process.";
        assert_eq!(sanitize_text(raw, 100).unwrap(), "It spawns a new process.");
        let raw2 = "NtClose is a Windows API function that closes handles. Handles are freed.";
        assert_eq!(sanitize_text(raw2, 100).unwrap(), "Handles are freed.");
        // not at the start: left alone
        let raw3 = "Note: CreateProcessA is a Windows API sequence.";
        assert_eq!(sanitize_text(raw3, 100).unwrap(), raw3);
    }

    #[test]
    fn strips_markup_markers() {
        assert_eq!(
            sanitize_text("## Heading **bold** `code` done", 100).unwrap(),
            "Heading bold code done"
        );
    }

    #[test]
    fn pure_boilerplate_becomes_empty_error() {
        let err = sanitize_text("NtClose is a Windows API sequence.", 100).unwrap_err();
        assert!(matches!(err, TextError::EmptyAfterSanitation { .. }));
        assert!(matches!(
            sanitize_text("\n\t  ", 100).unwrap_err(),
            TextError::EmptyAfterSanitation { .. }
        ));
    }

    #[test]
    fn zero_limit_is_invalid() {
        assert!(matches!(
            sanitize_text("abc", 0).unwrap_err(),
            TextError::InvalidWordLimit
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn output_has_no_control_chars_and_respects_limit(
                raw in "\\PC{0,400}",
                limit in 1usize..120,
            ) {
                match sanitize_text(&raw, limit) {
                    Ok(out) => {
                        prop_assert!(!out.chars().any(|c| c.is_control()));
                        prop_assert!(out.split_whitespace().count() <= limit);
                        prop_assert!(!out.is_empty());
                    }
                    Err(TextError::EmptyAfterSanitation { .. }) => {}
                    Err(e) => prop_assert!(false, "unexpected error {e:?}"),
                }
            }

            #[test]
            fn noisy_control_heavy_inputs_are_cleaned(
                words in proptest::collection::vec("[a-zA-Z]{1,8}", 0..50),
                seps in proptest::collection::vec(prop_oneof![Just("\n"), Just("\t"), Just("\r"), Just(" "), Just("\u{7f}")], 0..50),
            ) {
                let mut raw = String::new();
                for (i, w) in words.iter().enumerate() {
                    raw.push_str(w);
                    raw.push_str(seps.get(i % seps.len().max(1)).copied().unwrap_or(" "));
                }
                match sanitize_text(&raw, 100) {
                    Ok(out) => {
                        prop_assert!(!out.chars().any(|c| c.is_control()));
                        prop_assert!(out.split_whitespace().count() <= 100);
                    }
                    Err(TextError::EmptyAfterSanitation { .. }) => prop_assert!(words.is_empty()),
                    Err(e) => prop_assert!(false, "unexpected error {e:?}"),
                }
            }
        }
    }
}
