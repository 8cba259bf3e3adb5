// SPDX-License-Identifier: Apache-2.0

//! A strict, element-only XML reader.
//!
//! Accepts an optional declaration, comments, elements with attributes and
//! whitespace between them. Character data, CDATA, processing instructions
//! past the prolog and DOCTYPE are rejected.

use alloc::borrow::ToOwned;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Element {
    pub name: String,
    pub attrs: Vec<(String, String)>,
    pub children: Vec<Element>,
    pub line: usize,
}

impl Element {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct XmlError {
    pub line: usize,
    pub message: String,
}

type Result<T> = core::result::Result<T, XmlError>;

struct Reader<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Reader<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(XmlError { line: self.line, message: message.into() })
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
        }
        Some(c)
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.rest().starts_with(s) {
            for _ in s.chars() {
                self.bump();
            }
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> Result<()> {
        if self.eat(s) {
            Ok(())
        } else {
            self.err(alloc::format!("expected {s:?}"))
        }
    }

    fn skip_ws(&mut self) -> bool {
        let mut any = false;
        while matches!(self.peek(), Some(' ' | '\t' | '\r' | '\n')) {
            self.bump();
            any = true;
        }
        any
    }

    /// Skips whitespace and comments; non-whitespace text is an error.
    fn skip_misc(&mut self) -> Result<()> {
        loop {
            self.skip_ws();
            if self.rest().starts_with("<!--") {
                let start_line = self.line;
                self.eat("<!--");
                match self.rest().find("-->") {
                    Some(end) => {
                        let body = &self.rest()[..end];
                        if body.contains("--") {
                            return self.err("'--' inside comment");
                        }
                        for _ in 0..body.chars().count() {
                            self.bump();
                        }
                        self.eat("-->");
                    }
                    None => {
                        return Err(XmlError {
                            line: start_line,
                            message: "unterminated comment".to_owned(),
                        })
                    }
                }
            } else {
                return Ok(());
            }
        }
    }

    fn name(&mut self) -> Result<String> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            let ok = c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | ':');
            if !ok {
                break;
            }
            self.bump();
        }
        if start == self.pos {
            return self.err("expected a name");
        }
        Ok(self.src[start..self.pos].to_owned())
    }

    fn attr_value(&mut self) -> Result<String> {
        let quote = match self.bump() {
            Some(q @ ('"' | '\'')) => q,
            _ => return self.err("expected quoted attribute value"),
        };
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return self.err("unterminated attribute value"),
                Some(c) if c == quote => return Ok(out),
                Some('<') => return self.err("'<' in attribute value"),
                Some('&') => out.push(self.entity()?),
                Some(c) => out.push(c),
            }
        }
    }

    fn entity(&mut self) -> Result<char> {
        let Some(end) = self.rest().find(';') else {
            return self.err("unterminated entity reference");
        };
        let body = &self.rest()[..end];
        let c = match body {
            "amp" => Some('&'),
            "lt" => Some('<'),
            "gt" => Some('>'),
            "quot" => Some('"'),
            "apos" => Some('\''),
            _ => {
                let code = if let Some(h) = body.strip_prefix("#x") {
                    u32::from_str_radix(h, 16).ok()
                } else if let Some(d) = body.strip_prefix('#') {
                    d.parse::<u32>().ok()
                } else {
                    None
                };
                code.and_then(char::from_u32)
            }
        };
        match c {
            Some(c) => {
                for _ in 0..=body.len() {
                    self.bump();
                }
                Ok(c)
            }
            None => self.err(alloc::format!("unknown entity &{body};")),
        }
    }

    fn element(&mut self) -> Result<Element> {
        let line = self.line;
        self.expect("<")?;
        let name = self.name()?;
        let mut attrs: Vec<(String, String)> = Vec::new();
        loop {
            let had_ws = self.skip_ws();
            if self.eat("/>") {
                return Ok(Element { name, attrs, children: Vec::new(), line });
            }
            if self.eat(">") {
                break;
            }
            if !had_ws {
                return self.err("expected whitespace before attribute");
            }
            let key = self.name()?;
            self.skip_ws();
            self.expect("=")?;
            self.skip_ws();
            let value = self.attr_value()?;
            if attrs.iter().any(|(k, _)| *k == key) {
                return self.err(alloc::format!("duplicate attribute {key:?}"));
            }
            attrs.push((key, value));
        }
        let mut children = Vec::new();
        loop {
            self.skip_misc()?;
            if self.eat("</") {
                let close = self.name()?;
                if close != name {
                    return self.err(alloc::format!("mismatched end tag </{close}> for <{name}>"));
                }
                self.skip_ws();
                self.expect(">")?;
                return Ok(Element { name, attrs, children, line });
            }
            match self.peek() {
                None => return self.err(alloc::format!("unterminated element <{name}>")),
                Some('<') if self.rest().starts_with("<!") || self.rest().starts_with("<?") => {
                    return self.err("unsupported markup");
                }
                Some('<') => children.push(self.element()?),
                Some(_) => return self.err("unexpected character data"),
            }
        }
    }
}

pub(crate) fn parse_document(src: &str) -> Result<Element> {
    let src = src.strip_prefix('\u{feff}').unwrap_or(src);
    let mut r = Reader { src, pos: 0, line: 1 };
    if r.rest().starts_with("<?xml") {
        match r.rest().find("?>") {
            Some(end) => {
                for _ in 0..end + 2 {
                    r.bump();
                }
            }
            None => return r.err("unterminated XML declaration"),
        }
    }
    r.skip_misc()?;
    if r.rest().starts_with("<!") || r.rest().starts_with("<?") {
        return r.err("unsupported markup");
    }
    if r.peek() != Some('<') {
        return r.err("expected root element");
    }
    let root = r.element()?;
    r.skip_misc()?;
    if r.peek().is_some() {
        return r.err("content after root element");
    }
    Ok(root)
}

pub(crate) fn escape_attr(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "&#x{:x};", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_nested_elements_with_lines() {
        let doc = "<?xml version=\"1.0\"?>\n<a x='1'>\n  <!-- c -->\n  <b y=\"&lt;&#x41;\"/>\n</a>\n";
        let root = parse_document(doc).unwrap();
        assert_eq!(root.name, "a");
        assert_eq!(root.attr("x"), Some("1"));
        assert_eq!(root.children[0].attr("y"), Some("<A"));
        assert_eq!(root.children[0].line, 4);
    }

    #[test]
    fn rejects_text_and_mismatch() {
        assert_eq!(parse_document("<a>\nhi</a>").unwrap_err().line, 2);
        assert!(parse_document("<a></b>").is_err());
        assert!(parse_document("<a/><b/>").is_err());
        assert!(parse_document("<a x='1' x='2'/>").is_err());
        assert!(parse_document("<a x='&bogus;'/>").is_err());
    }

    #[test]
    fn escape_round_trips() {
        let v = "a&b<c>\"d'\te";
        let doc = alloc::format!("<a v=\"{}\"/>", escape_attr(v));
        assert_eq!(parse_document(&doc).unwrap().attr("v"), Some(v));
    }
}
