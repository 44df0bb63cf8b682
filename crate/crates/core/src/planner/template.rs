//! `comando` templates: `{prop}`, `{in.port}`, `{out.port}` and `{dir}`
//! placeholders, with `{{` and `}}` for literal braces.

/// Substitutes every placeholder through `lookup`. Fails on the first
/// placeholder `lookup` cannot resolve or on an unbalanced brace.
pub fn render<F>(template: &str, mut lookup: F) -> Result<String, String>
where
    F: FnMut(&str) -> Option<String>,
{
    let mut out = String::with_capacity(template.len());
    let mut chars = template.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            '{' if chars.peek().map(|p| p.1) == Some('{') => {
                chars.next();
                out.push('{');
            }
            '}' if chars.peek().map(|p| p.1) == Some('}') => {
                chars.next();
                out.push('}');
            }
            '{' => {
                let rest = &template[i + 1..];
                let Some(end) = rest.find('}') else {
                    return Err(format!("unclosed `{{` at byte {i}"));
                };
                let key = rest[..end].trim();
                match lookup(key) {
                    Some(v) => out.push_str(&v),
                    None => return Err(format!("unknown placeholder `{{{key}}}`")),
                }
                for _ in 0..=end {
                    chars.next();
                }
            }
            '}' => return Err(format!("unmatched `}}` at byte {i}")),
            c => out.push(c),
        }
    }
    Ok(out)
}

/// Placeholder names used by `template`, in order of appearance.
pub fn placeholders(template: &str) -> Result<Vec<String>, String> {
    let mut seen = Vec::new();
    render(template, |k| {
        seen.push(k.to_string());
        Some(String::new())
    })?;
    Ok(seen)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitutes_and_escapes() {
        let r = render("mpirun -np {num_nos} {{x}} {in.a}", |k| match k {
            "num_nos" => Some("4".into()),
            "in.a" => Some("/tmp/a".into()),
            _ => None,
        });
        assert_eq!(r.unwrap(), "mpirun -np 4 {x} /tmp/a");
    }

    #[test]
    fn unknown_placeholder_is_reported() {
        let err = render("run {num_threads}", |_| None).unwrap_err();
        assert!(err.contains("num_threads"));
    }

    #[test]
    fn unbalanced_braces() {
        assert!(render("a {b", |_| Some(String::new())).is_err());
        assert!(render("a } b", |_| Some(String::new())).is_err());
    }

    #[test]
    fn lists_placeholders() {
        assert_eq!(
            placeholders("{a} {{b}} {out.c}").unwrap(),
            vec!["a".to_string(), "out.c".to_string()]
        );
    }
}
