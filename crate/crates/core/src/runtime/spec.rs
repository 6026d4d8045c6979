//! Workflow specification documents.
//!
//! ```json
//! {"label": "scenario-1",
//!  "components": [{"id": "input", "role": "input", "image": "input.boxi"}, ...],
//!  "bindings": [{"source": "input:/", "target": "app:/Inputs"}, ...],
//!  "invocations": [{"app": "app", "argv": ["plot", "Inputs", "Outputs"]}]}
//! ```
//!
//! Relative image paths resolve against the directory of the document.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::archive::validate_path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Input,
    Application,
    Output,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Input => "input",
            Role::Application => "application",
            Role::Output => "output",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub id: String,
    pub role: Role,
    pub image: PathBuf,
}

/// `component:/inner/path`. The path is stored normalized, without the
/// leading slash; the empty string is the partition root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Endpoint {
    pub component: String,
    pub path: String,
}

impl Endpoint {
    pub fn new(component: impl Into<String>, path: &str) -> Result<Self> {
        let component = component.into();
        let trimmed = path.trim_matches('/');
        if !trimmed.is_empty() {
            validate_path(trimmed)
                .map_err(|_| Error::InvalidWorkflow(format!("bad inner path {path:?}")))?;
        }
        if component.is_empty() {
            return Err(Error::InvalidWorkflow(format!("endpoint without component: {path:?}")));
        }
        Ok(Endpoint {
            component,
            path: trimmed.to_owned(),
        })
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:/{}", self.component, self.path)
    }
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (component, path) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidWorkflow(format!("endpoint {s:?} lacks ':'")))?;
        Endpoint::new(component, path)
    }
}

impl Serialize for Endpoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub source: Endpoint,
    pub target: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invocation {
    pub app: String,
    #[serde(default)]
    pub argv: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowSpec {
    pub label: String,
    #[serde(default)]
    pub components: Vec<Component>,
    #[serde(default)]
    pub bindings: Vec<Binding>,
    #[serde(default)]
    pub invocations: Vec<Invocation>,
}

/// A binding seen from the application side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppBinding {
    /// Index into [`WorkflowSpec::bindings`].
    pub index: usize,
    pub app: String,
    pub app_path: String,
    pub data: String,
    pub data_role: Role,
    pub data_path: String,
}

impl AppBinding {
    /// Output data is written back after the run; input data never is.
    pub fn writable(&self) -> bool {
        self.data_role == Role::Output
    }
}

fn overlaps(a: &str, b: &str) -> bool {
    let under = |x: &str, y: &str| y.is_empty() || x == y || x.starts_with(&format!("{y}/"));
    under(a, b) || under(b, a)
}

impl WorkflowSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidWorkflow(e.to_string()))
    }

    /// Loads a document and resolves relative image paths against its
    /// directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        let mut spec = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for c in &mut spec.components {
            if c.image.is_relative() {
                c.image = base.join(&c.image);
            }
        }
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("spec serializes");
        s.push('\n');
        s
    }

    pub fn component(&self, id: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.id == id)
    }

    fn require(&self, id: &str) -> Result<&Component> {
        self.component(id)
            .ok_or_else(|| Error::UnknownComponent(id.to_owned()))
    }

    /// Checks every structural rule of a workflow.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for c in &self.components {
            if c.id.is_empty() || c.id.contains(['/', ':', '\0']) || c.id == "." || c.id == ".." {
                return Err(Error::InvalidWorkflow(format!("bad component id {:?}", c.id)));
            }
            if !ids.insert(c.id.as_str()) {
                return Err(Error::InvalidWorkflow(format!("duplicate component id {:?}", c.id)));
            }
        }
        for b in &self.bindings {
            self.require(&b.source.component)?;
            self.require(&b.target.component)?;
        }
        self.check_acyclic()?;
        let app_bindings = self.app_bindings()?;

        let mut by_app: HashMap<&str, Vec<&AppBinding>> = HashMap::new();
        for b in &app_bindings {
            if b.app_path.is_empty() {
                return Err(Error::InvalidWorkflow(format!(
                    "binding {} targets the application root",
                    b.index
                )));
            }
            by_app.entry(&b.app).or_default().push(b);
        }
        for (app, list) in &by_app {
            for (i, a) in list.iter().enumerate() {
                for b in &list[i + 1..] {
                    if overlaps(&a.app_path, &b.app_path) {
                        return Err(Error::InvalidWorkflow(format!(
                            "bindings into {app} overlap at /{} and /{}",
                            a.app_path, b.app_path
                        )));
                    }
                }
            }
        }
        let writable: Vec<&AppBinding> = app_bindings.iter().filter(|b| b.writable()).collect();
        for (i, a) in writable.iter().enumerate() {
            for b in &writable[i + 1..] {
                if a.data == b.data && a.app != b.app && overlaps(&a.data_path, &b.data_path) {
                    return Err(Error::InvalidWorkflow(format!(
                        "{} and {} both write {}:/{}",
                        a.app, b.app, a.data, a.data_path
                    )));
                }
            }
        }

        for inv in &self.invocations {
            let c = self.require(&inv.app)?;
            if c.role != Role::Application {
                return Err(Error::InvalidWorkflow(format!(
                    "invocation of {:?}, which is not an application",
                    inv.app
                )));
            }
        }
        Ok(())
    }

    fn check_acyclic(&self) -> Result<()> {
        let mut edges: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for b in &self.bindings {
            edges
                .entry(b.source.component.as_str())
                .or_default()
                .insert(b.target.component.as_str());
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state: HashMap<&str, u8> = HashMap::new();
        fn visit<'a>(
            node: &'a str,
            edges: &BTreeMap<&'a str, BTreeSet<&'a str>>,
            state: &mut HashMap<&'a str, u8>,
        ) -> Result<()> {
            match state.get(node) {
                Some(1) => return Err(Error::CyclicBinding(node.to_owned())),
                Some(2) => return Ok(()),
                _ => {}
            }
            state.insert(node, 1);
            if let Some(next) = edges.get(node) {
                for n in next {
                    visit(n, edges, state)?;
                }
            }
            state.insert(node, 2);
            Ok(())
        }
        for node in edges.keys() {
            visit(node, &edges, &mut state)?;
        }
        Ok(())
    }

    /// Bindings normalized to (application, data) pairs. Each binding must
    /// join exactly one application with one data component.
    pub fn app_bindings(&self) -> Result<Vec<AppBinding>> {
        self.bindings
            .iter()
            .enumerate()
            .map(|(index, b)| {
                let s = self.require(&b.source.component)?;
                let t = self.require(&b.target.component)?;
                let (app, app_ep, data, data_ep) = match (s.role, t.role) {
                    (Role::Application, Role::Input | Role::Output) => (s, &b.source, t, &b.target),
                    (Role::Input | Role::Output, Role::Application) => (t, &b.target, s, &b.source),
                    _ => {
                        return Err(Error::InvalidWorkflow(format!(
                            "binding {} -> {} must join one application and one data component",
                            b.source, b.target
                        )))
                    }
                };
                Ok(AppBinding {
                    index,
                    app: app.id.clone(),
                    app_path: app_ep.path.clone(),
                    data: data.id.clone(),
                    data_role: data.role,
                    data_path: data_ep.path.clone(),
                })
            })
            .collect()
    }

    /// Applications with at least one invocation.
    pub fn invoked_apps(&self) -> BTreeSet<&str> {
        self.invocations.iter().map(|i| i.app.as_str()).collect()
    }
}
