//! Versioned prompt templates. The built-in set is compiled in from
//! `prompts/v1`; a directory with the same file names overrides it.

use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("template {template}: unknown placeholder {{{name}}}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("template {template}: missing value for {{{name}}}")]
    MissingValue { template: String, name: String },
    #[error("template {0} is empty")]
    Empty(String),
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq)]
struct Part {
    segments: Vec<Segment>,
}

impl Part {
    fn parse(src: &str) -> Part {
        static SLOT: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
        let re = SLOT.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("valid regex"));
        let mut segments = Vec::new();
        let mut last = 0;
        for cap in re.captures_iter(src) {
            let m = cap.get(0).expect("match");
            if m.start() > last {
                segments.push(Segment::Text(src[last..m.start()].to_string()));
            }
            segments.push(Segment::Slot(cap[1].to_string()));
            last = m.end();
        }
        if last < src.len() {
            segments.push(Segment::Text(src[last..].to_string()));
        }
        Part { segments }
    }

    fn slots(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Slot(n) => Some(n.as_str()),
            Segment::Text(_) => None,
        })
    }

    fn render(&self, template: &str, vars: &Vars) -> Result<String, PromptError> {
        let mut out = String::new();
        for s in &self.segments {
            match s {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(n) => out.push_str(vars.0.get(n.as_str()).ok_or_else(|| {
                    PromptError::MissingValue {
                        template: template.to_string(),
                        name: n.clone(),
                    }
                })?),
            }
        }
        Ok(out)
    }
}

/// Placeholder values for rendering.
#[derive(Debug, Default, Clone)]
pub struct Vars(BTreeMap<&'static str, String>);

impl Vars {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, name: &'static str, value: impl Into<String>) -> Self {
        self.0.insert(name, value.into());
        self
    }
}

/// A template with an optional system part, separated from the user part by
/// a line holding only `---`.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    name: String,
    system: Part,
    user: Part,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub system: String,
    pub user: String,
}

impl Template {
    pub fn parse(name: &str, src: &str, allowed: &[&str]) -> Result<Template, PromptError> {
        if src.trim().is_empty() {
            return Err(PromptError::Empty(name.to_string()));
        }
        let (system, user) = match src.split_once("\n---\n") {
            Some((s, u)) => (s.trim_end().to_string(), u.trim_end().to_string()),
            None => (String::new(), src.trim_end().to_string()),
        };
        let t = Template {
            name: name.to_string(),
            system: Part::parse(&system),
            user: Part::parse(&user),
        };
        if let Some(bad) = t
            .system
            .slots()
            .chain(t.user.slots())
            .find(|s| !allowed.contains(s))
        {
            return Err(PromptError::UnknownPlaceholder {
                template: name.to_string(),
                name: bad.to_string(),
            });
        }
        Ok(t)
    }

    pub fn render(&self, vars: &Vars) -> Result<Rendered, PromptError> {
        Ok(Rendered {
            system: self.system.render(&self.name, vars)?,
            user: self.user.render(&self.name, vars)?,
        })
    }

    /// Renders the user part only.
    pub fn render_text(&self, vars: &Vars) -> Result<String, PromptError> {
        self.user.render(&self.name, vars)
    }
}

macro_rules! builtin {
    ($file:literal) => {
        ($file, include_str!(concat!("../prompts/v1/", $file)))
    };
}

const BUILTIN: &[(&str, &str)] = &[
    builtin!("predict.txt"),
    builtin!("reflect.txt"),
    builtin!("questions.txt"),
    builtin!("confidence.txt"),
    builtin!("extract.txt"),
    builtin!("extract_schema.txt"),
    builtin!("compare.txt"),
    builtin!("probe.txt"),
    builtin!("clarify.txt"),
    builtin!("query_label.txt"),
    builtin!("query_explanation.txt"),
    builtin!("query_rules.txt"),
    builtin!("oracle.txt"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub version: String,
    pub predict: Template,
    pub reflect: Template,
    pub questions: Vec<Template>,
    pub confidence: Template,
    pub extract: Template,
    pub extract_schema: String,
    pub compare: Template,
    pub probe: Template,
    pub clarify: Template,
    pub query_label: Template,
    pub query_explanation: Template,
    pub query_rules: Template,
    pub oracle: Template,
}

impl PromptSet {
    pub fn builtin() -> PromptSet {
        let files: BTreeMap<&str, String> =
            BUILTIN.iter().map(|(n, s)| (*n, s.to_string())).collect();
        Self::from_files("v1", &files).expect("built-in prompts are valid")
    }

    /// Loads `dir`, falling back to the built-in file for any that is absent.
    /// The version is the directory name.
    pub fn load_dir(dir: &Path) -> Result<PromptSet, PromptError> {
        let mut files = BTreeMap::new();
        for (name, builtin) in BUILTIN {
            let path = dir.join(name);
            let src = if path.exists() {
                std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?
            } else {
                builtin.to_string()
            };
            files.insert(*name, src);
        }
        let version = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".into());
        Self::from_files(&version, &files)
    }

    fn from_files(version: &str, files: &BTreeMap<&str, String>) -> Result<PromptSet, PromptError> {
        let t = |file: &str, allowed: &[&str]| Template::parse(file, &files[file], allowed);
        let questions = files["questions.txt"]
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .enumerate()
            .map(|(i, q)| Template::parse(&format!("questions.txt:{}", i + 1), q, &["label"]))
            .collect::<Result<Vec<_>, _>>()?;
        if questions.is_empty() {
            return Err(PromptError::Empty("questions.txt".into()));
        }
        let schema = files["extract_schema.txt"].trim().to_string();
        if schema.is_empty() {
            return Err(PromptError::Empty("extract_schema.txt".into()));
        }
        const CASE: &[&str] = &["instance", "label", "reasoning", "gaps"];
        Ok(PromptSet {
            version: version.to_string(),
            predict: t("predict.txt", &["labels", "instance", "knowledge"])?,
            reflect: t(
                "reflect.txt",
                &[
                    "question",
                    "instance",
                    "label",
                    "reasoning",
                    "knowledge",
                    "prior",
                ],
            )?,
            questions,
            confidence: t("confidence.txt", &["dialogue", "options"])?,
            extract: t(
                "extract.txt",
                &["feedback", "instance", "label", "query", "kinds"],
            )?,
            extract_schema: schema,
            compare: t("compare.txt", &["new", "old", "options"])?,
            probe: t("probe.txt", &["instance", "label", "knowledge"])?,
            clarify: t(
                "clarify.txt",
                &["new_kid", "new_text", "old_kid", "old_text", "instance"],
            )?,
            query_label: t("query_label.txt", CASE)?,
            query_explanation: t("query_explanation.txt", CASE)?,
            query_rules: t("query_rules.txt", CASE)?,
            oracle: t(
                "oracle.txt",
                &["kind", "instance", "query", "dialogue", "labels"],
            )?,
        })
    }

    /// Keeps only the first `n` reflective questions.
    pub fn with_question_count(mut self, n: usize) -> PromptSet {
        self.questions.truncate(n.max(1));
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_loads_with_nine_questions() {
        let p = PromptSet::builtin();
        assert_eq!(p.questions.len(), 9);
        assert!(p.questions[1]
            .render_text(&Vars::new())
            .unwrap()
            .contains("implicit assumptions"));
    }

    #[test]
    fn unknown_placeholder_fails_at_load() {
        let err = Template::parse("x", "hello {nope}", &["label"]).unwrap_err();
        assert!(matches!(err, PromptError::UnknownPlaceholder { .. }));
    }

    #[test]
    fn missing_value_fails_at_render() {
        let t = Template::parse("x", "hello {label}", &["label"]).unwrap();
        assert!(t.render(&Vars::new()).is_err());
        assert_eq!(
            t.render_text(&Vars::new().set("label", "{instance}"))
                .unwrap(),
            "hello {instance}"
        );
    }

    #[test]
    fn system_and_user_parts() {
        let t = Template::parse("x", "[task:t]\nsys\n---\nuser {label}", &["label"]).unwrap();
        let r = t.render(&Vars::new().set("label", "Match")).unwrap();
        assert_eq!(r.system, "[task:t]\nsys");
        assert_eq!(r.user, "user Match");
    }

    #[test]
    fn clarify_template_asks_the_scope_question() {
        let p = PromptSet::builtin();
        let text = p
            .clarify
            .render_text(
                &Vars::new()
                    .set("new_kid", "Rule_124")
                    .set("new_text", "n")
                    .set("old_kid", "Rule_045")
                    .set("old_text", "o")
                    .set("instance", "i"),
            )
            .unwrap();
        assert!(text.contains("Rule_045 now outdated in all cases"));
    }

    #[test]
    fn directory_override() {
        let dir = tempfile::tempdir().unwrap();
        let v2 = dir.path().join("v2");
        std::fs::create_dir(&v2).unwrap();
        std::fs::write(
            v2.join("questions.txt"),
            "Only one question about {label}?\n",
        )
        .unwrap();
        let p = PromptSet::load_dir(&v2).unwrap();
        assert_eq!(p.version, "v2");
        assert_eq!(p.questions.len(), 1);
        std::fs::write(v2.join("probe.txt"), "{bogus}").unwrap();
        assert!(PromptSet::load_dir(&v2).is_err());
    }
}
