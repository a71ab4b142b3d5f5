//! Visible text and tag skeleton extraction.

use ego_tree::NodeRef;
use scraper::{Html, Node};

use crate::records::{collapse_whitespace, HtmlInfo};

const HIDDEN: &[&str] = &["script", "style", "noscript", "template", "head"];

pub fn extract(document: &str) -> HtmlInfo {
    let doc = Html::parse_document(document);
    let root = doc.tree.root();
    HtmlInfo {
        visible_text: visible_text_of(root),
        tag_structure: tag_structure_of(root),
    }
}

pub fn visible_text(document: &str) -> String {
    visible_text_of(Html::parse_document(document).tree.root())
}

pub fn tag_structure(document: &str) -> String {
    tag_structure_of(Html::parse_document(document).tree.root())
}

fn visible_text_of(root: NodeRef<'_, Node>) -> String {
    let mut parts = Vec::new();
    collect_text(root, &mut parts);
    collapse_whitespace(&parts.join(" "))
}

fn collect_text<'a>(node: NodeRef<'a, Node>, out: &mut Vec<&'a str>) {
    match node.value() {
        Node::Text(t) => out.push(t),
        Node::Element(e) if HIDDEN.contains(&e.name()) => return,
        Node::Comment(_) | Node::ProcessingInstruction(_) | Node::Doctype(_) => return,
        _ => {}
    }
    for child in node.children() {
        collect_text(child, out);
    }
}

fn tag_structure_of(root: NodeRef<'_, Node>) -> String {
    let mut out = String::new();
    write_tags(root, &mut out);
    out
}

fn write_tags(node: NodeRef<'_, Node>, out: &mut String) {
    let name = match node.value() {
        Node::Element(e) => e
            .name()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || *c == '-')
            .collect::<String>(),
        _ => String::new(),
    };
    if !name.is_empty() {
        out.push('<');
        out.push_str(&name);
        out.push('>');
    }
    for child in node.children() {
        write_tags(child, out);
    }
    if !name.is_empty() {
        out.push_str("</");
        out.push_str(&name);
        out.push('>');
    }
}
