use std::ops::Range;

use super::{CommandBlock, GuidanceError};
use crate::irt::OsTag;

/// A command together with the byte span of its markers in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Span {
    pub range: Range<usize>,
    pub command: String,
}

/// Finds unescaped `$` markers. `\$` is a literal dollar sign.
fn markers(text: &str) -> Vec<usize> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    for (i, b) in bytes.iter().enumerate() {
        if *b == b'$' && (i == 0 || bytes[i - 1] != b'\\') {
            out.push(i);
        }
    }
    out
}

pub(crate) fn scan(text: &str) -> Result<Vec<Span>, GuidanceError> {
    let marks = markers(text);
    if marks.len() % 2 == 1 {
        return Err(GuidanceError::UnpairedDelimiter { markers: marks.len() });
    }
    let mut spans = Vec::with_capacity(marks.len() / 2);
    for (index, pair) in marks.chunks(2).enumerate() {
        let body = &text[pair[0] + 1..pair[1]];
        let command = body.replace("\\$", "$").trim().to_string();
        if command.is_empty() {
            return Err(GuidanceError::EmptyCommand { index });
        }
        spans.push(Span { range: pair[0]..pair[1] + 1, command });
    }
    Ok(spans)
}

/// Commands between paired `$` markers, in order of appearance.
pub fn extract_commands(text: &str, os_tag: OsTag) -> Result<Vec<CommandBlock>, GuidanceError> {
    Ok(scan(text)?
        .into_iter()
        .map(|s| CommandBlock { command: s.command, os_tag })
        .collect())
}

/// Wraps a command in markers, escaping any dollar signs it contains.
pub fn wrap_command(command: &str) -> String {
    format!("$ {} $", command.replace('$', "\\$"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmds(text: &str) -> Vec<String> {
        extract_commands(text, OsTag::Linux).unwrap().into_iter().map(|c| c.command).collect()
    }

    #[test]
    fn appendix_case_one_blocks() {
        let text = "1. View the command history of the current user.\n  $ history $\n2. Read the file.\n  $ cat ~/.bash_history $";
        assert_eq!(cmds(text), ["history", "cat ~/.bash_history"]);
    }

    #[test]
    fn no_commands() {
        assert!(cmds("no commands here").is_empty());
    }

    #[test]
    fn windows_command() {
        assert_eq!(cmds("$ wmic useraccount get name,sid $"), ["wmic useraccount get name,sid"]);
    }

    #[test]
    fn escaped_dollar_is_literal() {
        let text = r"$ Get-EventLog -LogName Security | Where-Object { \$_.EventID -eq 4657 } $";
        assert_eq!(cmds(text), ["Get-EventLog -LogName Security | Where-Object { $_.EventID -eq 4657 }"]);
    }

    #[test]
    fn multiline_commands_keep_newlines() {
        let text = "$ for u in a b; do\n  id \\$u\ndone $";
        assert_eq!(cmds(text), ["for u in a b; do\n  id $u\ndone"]);
    }

    #[test]
    fn odd_marker_count_is_an_error() {
        let err = extract_commands("$ history $ and $ cat", OsTag::Linux).unwrap_err();
        assert_eq!(err, GuidanceError::UnpairedDelimiter { markers: 3 });
    }

    #[test]
    fn empty_pair_is_an_error() {
        assert_eq!(extract_commands("$  $", OsTag::Linux).unwrap_err(), GuidanceError::EmptyCommand { index: 0 });
    }

    #[test]
    fn wrap_round_trips() {
        let c = "echo $HOME | awk '{print $1}'";
        assert_eq!(cmds(&wrap_command(c)), [c]);
    }
}
