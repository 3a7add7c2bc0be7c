//! Deterministic natural-language descriptions of SQL answers.
//!
//! A minimal clause parser covers the shapes the memory actually stores:
//! SELECT lists with aggregates, FROM with aliases, JOIN ... ON, WHERE,
//! GROUP BY, ORDER BY, and LIMIT. Anything it cannot read degrades to the
//! raw text rather than failing, because descriptions only sharpen retrieval
//! and must never block a write.

use serde::{Deserialize, Serialize};

/// How to treat an answer when describing it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerKind {
    Sql,
    Freeform,
}

/// Renders a clause-by-clause description of a SQL answer; free-form answers
/// pass through unchanged. Unparseable SQL comes back as the raw answer
/// behind an `[undescribed]` flag.
pub fn describe_structured_answer(answer: &str, kind: AnswerKind) -> String {
    match kind {
        AnswerKind::Freeform => answer.to_string(),
        AnswerKind::Sql => match parse_select(answer) {
            Some(parsed) => render(&parsed),
            None => format!("[undescribed] {answer}"),
        },
    }
}

#[derive(Debug, Default)]
struct ParsedSelect {
    distinct: bool,
    select_items: Vec<String>,
    from: Option<String>,
    joins: Vec<Join>,
    where_clause: Option<String>,
    group_by: Option<String>,
    order_by: Option<String>,
    limit: Option<String>,
}

#[derive(Debug)]
struct Join {
    table: String,
    condition: Option<String>,
}

fn parse_select(sql: &str) -> Option<ParsedSelect> {
    let stmt = sql.trim().trim_end_matches(';').trim();
    let rest = strip_keyword(stmt, "select")?;

    let mut parsed = ParsedSelect::default();
    let clause_starts = ["from", "where", "group by", "order by", "limit"];
    let (select_part, mut tail) = split_at_first_keyword(rest, &clause_starts);

    let select_part = select_part.trim();
    let select_body = match strip_keyword(select_part, "distinct") {
        Some(body) => {
            parsed.distinct = true;
            body
        }
        None => select_part,
    };
    parsed.select_items = split_top_level(select_body, ',')
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if parsed.select_items.is_empty() {
        return None;
    }

    while let Some((keyword, body, next)) = take_clause(tail, &clause_starts) {
        match keyword {
            "from" => {
                let (base, joins) = parse_from(body);
                parsed.from = Some(base);
                parsed.joins = joins;
            }
            "where" => parsed.where_clause = Some(body.trim().to_string()),
            "group by" => parsed.group_by = Some(body.trim().to_string()),
            "order by" => parsed.order_by = Some(body.trim().to_string()),
            "limit" => parsed.limit = Some(body.trim().to_string()),
            _ => unreachable!("unknown clause keyword"),
        }
        tail = next;
    }
    Some(parsed)
}

fn parse_from(body: &str) -> (String, Vec<Join>) {
    let join_keywords =
        ["inner join", "left outer join", "left join", "right join", "full join", "cross join", "join"];
    let (base, mut tail) = split_at_first_keyword(body, &join_keywords);
    let mut joins = Vec::new();
    while let Some((_, join_body, next)) = take_clause(tail, &join_keywords) {
        let (table, condition) = match find_keyword(join_body, "on") {
            Some(pos) => {
                let (t, c) = join_body.split_at(pos);
                (t.trim().to_string(), Some(c[2..].trim().to_string()))
            }
            None => (join_body.trim().to_string(), None),
        };
        joins.push(Join { table, condition });
        tail = next;
    }
    (base.trim().to_string(), joins)
}

fn render(parsed: &ParsedSelect) -> String {
    let mut phrases: Vec<String> = Vec::new();
    let mut plain: Vec<String> = Vec::new();
    for item in &parsed.select_items {
        match describe_select_item(item) {
            SelectItem::Aggregate(phrase) => phrases.push(phrase),
            SelectItem::Plain(text) => plain.push(text),
        }
    }
    if !plain.is_empty() {
        let verb = if parsed.distinct { "selects the distinct" } else { "selects" };
        phrases.insert(0, format!("{verb} {}", join_list(&plain)));
    }
    if let Some(from) = &parsed.from {
        phrases.push(format!("from table {}", describe_table(from)));
    }
    for join in &parsed.joins {
        match &join.condition {
            Some(cond) => phrases.push(format!("joined with {} on {}", describe_table(&join.table), cond)),
            None => phrases.push(format!("joined with {}", describe_table(&join.table))),
        }
    }
    if let Some(w) = &parsed.where_clause {
        phrases.push(format!("filtered by {w}"));
    }
    if let Some(g) = &parsed.group_by {
        phrases.push(format!("grouped by {g}"));
    }
    if let Some(o) = &parsed.order_by {
        phrases.push(format!("ordered by {}", describe_order(o)));
    }
    if let Some(l) = &parsed.limit {
        phrases.push(format!("limited to {l} rows"));
    }
    format!("This query {}.", phrases.join(", "))
}

enum SelectItem {
    Aggregate(String),
    Plain(String),
}

fn describe_select_item(item: &str) -> SelectItem {
    let (core, alias) = split_alias(item);
    let suffix = alias.map(|a| format!(" as {a}")).unwrap_or_default();
    if let Some((func, inner)) = aggregate_call(core) {
        let inner = inner.trim();
        let phrase = match func.as_str() {
            "count" => {
                if inner == "*" {
                    "counts the number of rows".to_string()
                } else if let Some(col) = strip_keyword(inner, "distinct") {
                    format!("counts the distinct values of {}", col.trim())
                } else {
                    format!("counts the number of {inner} values")
                }
            }
            "sum" => format!("sums {inner}"),
            "avg" => format!("averages {inner}"),
            "min" => format!("takes the minimum of {inner}"),
            "max" => format!("takes the maximum of {inner}"),
            _ => return SelectItem::Plain(item.trim().to_string()),
        };
        return SelectItem::Aggregate(format!("{phrase}{suffix}"));
    }
    if core.contains('(') {
        return SelectItem::Aggregate(format!("computes {}{suffix}", core.trim()));
    }
    SelectItem::Plain(item.trim().to_string())
}

/// Splits a whole-call aggregate like `count(*)` or `SUM(t.x)`; anything with
/// trailing arithmetic is left to the generic `computes` phrasing.
fn aggregate_call(core: &str) -> Option<(String, &str)> {
    let open = core.find('(')?;
    if !core.trim_end().ends_with(')') {
        return None;
    }
    let func = core[..open].trim().to_lowercase();
    if func.is_empty() || !func.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return None;
    }
    let inner = core.trim_end();
    let inner = &inner[open + 1..inner.len() - 1];
    // Reject nested shapes like `sum(a) + sum(b)` where the closing paren is
    // not the call's own.
    let mut depth = 0i32;
    for c in inner.chars() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return None;
                }
            }
            _ => {}
        }
    }
    if depth != 0 {
        return None;
    }
    Some((func, inner))
}

fn split_alias(item: &str) -> (&str, Option<&str>) {
    if let Some(pos) = find_keyword(item, "as") {
        let alias = item[pos + 2..].trim();
        if !alias.is_empty() {
            return (item[..pos].trim(), Some(alias));
        }
    }
    (item.trim(), None)
}

fn describe_table(table: &str) -> String {
    let (name, alias) = split_alias(table);
    let mut words = name.split_whitespace();
    let base = words.next().unwrap_or(name);
    let implicit_alias = words.next();
    match alias.or(implicit_alias) {
        Some(a) => format!("{base} (aliased {a})"),
        None => base.to_string(),
    }
}

fn describe_order(order: &str) -> String {
    let terms: Vec<String> = split_top_level(order, ',')
        .into_iter()
        .map(|term| {
            let t = term.trim();
            let lower = t.to_ascii_lowercase();
            if lower.ends_with(" desc") {
                format!("{} descending", t[..t.len() - 5].trim())
            } else if lower.ends_with(" asc") {
                format!("{} ascending", t[..t.len() - 4].trim())
            } else {
                t.to_string()
            }
        })
        .collect();
    terms.join(", then ")
}

fn join_list(items: &[String]) -> String {
    match items.len() {
        0 => String::new(),
        1 => items[0].clone(),
        _ => format!("{} and {}", items[..items.len() - 1].join(", "), items[items.len() - 1]),
    }
}

/// Strips a leading keyword (case-insensitive, word-bounded), returning the
/// remainder.
fn strip_keyword<'a>(text: &'a str, keyword: &str) -> Option<&'a str> {
    let trimmed = text.trim_start();
    if trimmed.len() < keyword.len() {
        return None;
    }
    let (head, rest) = trimmed.split_at(keyword.len());
    if !head.eq_ignore_ascii_case(keyword) {
        return None;
    }
    if rest.chars().next().map(|c| c.is_alphanumeric() || c == '_').unwrap_or(false) {
        return None;
    }
    Some(rest)
}

/// Position of the first top-level, quote-aware, word-bounded occurrence of
/// `keyword` (case-insensitive, with multi-word keywords matching across any
/// whitespace run as written).
fn find_keyword(text: &str, keyword: &str) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0i32;
    let mut in_quote: Option<u8> = None;
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if let Some(q) = in_quote {
            if c == q {
                in_quote = None;
            }
            i += 1;
            continue;
        }
        match c {
            b'\'' | b'"' | b'`' => in_quote = Some(c),
            b'(' => depth += 1,
            b')' => depth -= 1,
            _ => {}
        }
        if depth == 0 && matches_keyword_at(text, i, keyword) {
            return Some(i);
        }
        i += 1;
    }
    None
}

fn matches_keyword_at(text: &str, at: usize, keyword: &str) -> bool {
    let bytes = text.as_bytes();
    if at > 0 {
        let prev = bytes[at - 1] as char;
        if prev.is_alphanumeric() || prev == '_' {
            return false;
        }
    }
    let mut ti = at;
    for part in keyword.split(' ') {
        if ti > at {
            let mut seen_space = false;
            while ti < bytes.len() && (bytes[ti] as char).is_whitespace() {
                seen_space = true;
                ti += 1;
            }
            if !seen_space {
                return false;
            }
        }
        if ti + part.len() > bytes.len() || !text[ti..ti + part.len()].eq_ignore_ascii_case(part) {
            return false;
        }
        ti += part.len();
    }
    if ti < bytes.len() {
        let next = bytes[ti] as char;
        if next.is_alphanumeric() || next == '_' {
            return false;
        }
    }
    true
}

/// Splits `text` at the earliest of the given keywords; returns (head, tail
/// starting at the keyword) or (text, "") when none occur.
fn split_at_first_keyword<'a>(text: &'a str, keywords: &[&str]) -> (&'a str, &'a str) {
    let mut best: Option<usize> = None;
    for keyword in keywords {
        if let Some(pos) = find_keyword(text, keyword) {
            best = Some(best.map_or(pos, |b| b.min(pos)));
        }
    }
    match best {
        Some(pos) => (&text[..pos], &text[pos..]),
        None => (text, ""),
    }
}

/// Reads the clause that `tail` starts with: (keyword, clause body, rest).
fn take_clause<'a>(tail: &'a str, keywords: &[&'a str]) -> Option<(&'a str, &'a str, &'a str)> {
    let trimmed = tail.trim_start();
    if trimmed.is_empty() {
        return None;
    }
    for keyword in keywords {
        if matches_keyword_at(trimmed, 0, keyword) {
            let body_start = &trimmed[keyword.len()..];
            let (body, rest) = split_at_first_keyword(body_start, keywords);
            return Some((keyword, body, rest));
        }
    }
    None
}

fn split_top_level(text: &str, separator: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut in_quote: Option<char> = None;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if let Some(q) = in_quote {
            if c == q {
                in_quote = None;
            }
            continue;
        }
        match c {
            '\'' | '"' | '`' => in_quote = Some(c),
            '(' => depth += 1,
            ')' => depth -= 1,
            c if c == separator && depth == 0 => {
                parts.push(&text[start..i]);
                start = i + separator.len_utf8();
            }
            _ => {}
        }
    }
    parts.push(&text[start..]);
    parts
}
