// SPDX-License-Identifier: Apache-2.0

//! Simulated boot of an [`ImageArtifact`] and the checks run against the
//! resulting console transcript.
//!
//! The transcript has three parts: kernel and init lines (including one
//! `[boot] <module>: Hello from <module>` line per autoloaded module), the
//! `qemuarm64 login:` prompt, and one `<command>: <output>` line per installed
//! command. The same parser reads transcripts captured from a real emulator.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::image::{ImageArtifact, PackageKind};
use crate::layer::is_name;

pub const LOGIN_PROMPT: &str = "qemuarm64 login:";
pub const MODULE_PREFIX: &str = "[boot] ";
pub const MISSING_LIBRARY: &str = "error while loading shared library ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandOutput {
    pub output: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootTranscript {
    pub lines: Vec<String>,
    pub reached_login: bool,
    pub test_outputs: BTreeMap<String, CommandOutput>,
}

impl BootTranscript {
    /// Interprets raw console lines.
    pub fn from_lines(lines: Vec<String>) -> Self {
        let login = lines.iter().position(|l| l.trim_end() == LOGIN_PROMPT);
        let mut test_outputs = BTreeMap::new();
        if let Some(idx) = login {
            for line in &lines[idx + 1..] {
                let Some((cmd, out)) = line.split_once(": ") else { continue };
                if !is_name(cmd) {
                    continue;
                }
                let output = out.trim_end().to_owned();
                let passed = !output.starts_with(MISSING_LIBRARY);
                test_outputs.entry(cmd.to_owned()).or_insert(CommandOutput { output, passed });
            }
        }
        BootTranscript { lines, reached_login: login.is_some(), test_outputs }
    }

    pub fn login_index(&self) -> Option<usize> {
        self.lines.iter().position(|l| l.trim_end() == LOGIN_PROMPT)
    }

    /// Index of the first kernel-module line for `module`, if any.
    pub fn module_line(&self, module: &str) -> Option<usize> {
        let prefix = format!("{MODULE_PREFIX}{module}: ");
        self.lines.iter().position(|l| l.starts_with(&prefix))
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            s.push_str(l);
            s.push('\n');
        }
        s
    }
}

/// Runtime closure of `pkg` over the image's rdepends table, excluding `pkg`.
fn runtime_closure<'a>(img: &'a ImageArtifact, pkg: &'a str) -> BTreeSet<&'a str> {
    let mut seen = BTreeSet::new();
    let mut stack: Vec<&str> = alloc::vec![pkg];
    while let Some(p) = stack.pop() {
        for dep in img.rdepends.get(p).into_iter().flatten() {
            if dep != pkg && seen.insert(dep.as_str()) {
                stack.push(dep);
            }
        }
    }
    seen
}

/// Boots `img` in simulation.
pub fn compose_boot(img: &ImageArtifact) -> BootTranscript {
    let mut lines: Vec<String> = Vec::new();
    lines.push("Booting Linux on physical CPU 0x0000000000 [0x410fd034]".to_owned());
    lines.push(format!(
        "Linux version 5.15.0-yocto-standard ({} {})",
        img.image_name,
        img.image_digest.short(12)
    ));
    lines.push("Machine model: linux,dummy-virt".to_owned());
    for module in &img.autoload_modules {
        lines.push(format!("{MODULE_PREFIX}{module}: Hello from {module}"));
    }
    lines.push("Run /sbin/init as init process".to_owned());
    lines.push("INIT: version 3.01 booting".to_owned());
    lines.push("Starting syslogd/klogd: done".to_owned());
    lines.push("Poky (Yocto Project Reference Distro) qemuarm64 ttyAMA0".to_owned());
    lines.push(LOGIN_PROMPT.to_owned());

    let installed: BTreeSet<&str> = img.packages.iter().map(|p| p.name.as_str()).collect();
    for pkg in img.packages.iter().filter(|p| p.kind == PackageKind::Command) {
        let deps = runtime_closure(img, &pkg.name);
        match deps.iter().find(|d| !installed.contains(**d)) {
            Some(missing) => {
                lines.push(format!("{}: {MISSING_LIBRARY}{missing}", pkg.name));
            }
            None => {
                let via = img
                    .rdepends
                    .get(&pkg.name)
                    .and_then(|d| d.first())
                    .map(String::as_str)
                    .unwrap_or(&pkg.name);
                lines.push(format!("{}: Hello World from {via}", pkg.name));
            }
        }
    }
    BootTranscript::from_lines(lines)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleExpectation {
    pub module: String,
    /// Substring the module's boot line must contain.
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandExpectation {
    pub command: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootTestSpec {
    #[serde(default)]
    pub expected_module_lines: Vec<ModuleExpectation>,
    #[serde(default)]
    pub expected_commands: Vec<CommandExpectation>,
    #[serde(default = "yes")]
    pub require_login: bool,
}

fn yes() -> bool {
    true
}

impl Default for BootTestSpec {
    /// The module greeting, the library-backed command, and the login prompt.
    fn default() -> Self {
        BootTestSpec {
            expected_module_lines: alloc::vec![ModuleExpectation {
                module: "hello-mod".into(),
                message: "Hello from hello-mod".into(),
            }],
            expected_commands: alloc::vec![CommandExpectation {
                command: "helloworld".into(),
                output: "Hello World from libhelloworld".into(),
            }],
            require_login: true,
        }
    }
}

impl BootTestSpec {
    pub fn login_only() -> Self {
        BootTestSpec {
            expected_module_lines: Vec::new(),
            expected_commands: Vec::new(),
            require_login: true,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.expected_module_lines.is_empty()
            && self.expected_commands.is_empty()
            && !self.require_login
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestResult {
    pub passed: bool,
    pub assertions: Vec<Assertion>,
}

impl TestResult {
    pub fn failed(&self) -> impl Iterator<Item = &Assertion> {
        self.assertions.iter().filter(|a| !a.passed)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for a in &self.assertions {
            let mark = if a.passed { "PASS" } else { "FAIL" };
            s.push_str(&format!("{mark} {}: {}\n", a.name, a.detail));
        }
        let total = self.assertions.len();
        let ok = self.assertions.iter().filter(|a| a.passed).count();
        s.push_str(&format!(
            "boot test {}: {ok}/{total} assertions passed\n",
            if self.passed { "passed" } else { "failed" }
        ));
        s
    }
}

/// Checks `spec` against a transcript.
pub fn evaluate(t: &BootTranscript, spec: &BootTestSpec) -> TestResult {
    let login = t.login_index();
    let mut assertions = Vec::new();
    if spec.require_login {
        assertions.push(Assertion {
            name: "login".into(),
            passed: t.reached_login,
            detail: match login {
                Some(i) => format!("prompt at line {}", i + 1),
                None => format!("no {LOGIN_PROMPT:?} line"),
            },
        });
    }
    for exp in &spec.expected_module_lines {
        let prefix = format!("{MODULE_PREFIX}{}: ", exp.module);
        let before = login.unwrap_or(t.lines.len());
        let hit = t.lines[..before]
            .iter()
            .position(|l| l.starts_with(&prefix) && l.contains(exp.message.as_str()));
        assertions.push(Assertion {
            name: format!("module {}", exp.module),
            passed: hit.is_some(),
            detail: match hit {
                Some(i) => format!("line {}: {}", i + 1, t.lines[i]),
                None => format!("no boot line for {} containing {:?}", exp.module, exp.message),
            },
        });
    }
    for exp in &spec.expected_commands {
        let (passed, detail) = match t.test_outputs.get(&exp.command) {
            Some(out) if out.passed && out.output == exp.output => (true, out.output.clone()),
            Some(out) => (false, format!("got {:?}, expected {:?}", out.output, exp.output)),
            None => (false, format!("{} produced no output", exp.command)),
        };
        assertions.push(Assertion { name: format!("command {}", exp.command), passed, detail });
    }
    TestResult { passed: assertions.iter().all(|a| a.passed), assertions }
}

/// Boots `img` in simulation and checks `spec` against the transcript.
pub fn run_boot_test(img: &ImageArtifact, spec: &BootTestSpec) -> TestResult {
    evaluate(&compose_boot(img), spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::Digest;
    use crate::taskgraph::PackageMeta;
    use alloc::vec;

    fn meta(name: &str, rdepends: &[&str], kernel_module: bool) -> (PackageMeta, Digest) {
        (
            PackageMeta {
                name: name.into(),
                version: "1.0".into(),
                rdepends: rdepends.iter().map(|s| (*s).into()).collect(),
                kernel_module,
                autoload: kernel_module,
                library: name.starts_with("lib"),
            },
            Digest::of(name.as_bytes()),
        )
    }

    fn fixture() -> ImageArtifact {
        ImageArtifact::compose(
            "core-image-minimal",
            vec![
                meta("libhelloworld", &[], false),
                meta("helloworld", &["libhelloworld"], false),
                meta("hello-mod", &[], true),
            ],
        )
    }

    #[test]
    fn module_line_precedes_login_and_command_follows() {
        let t = compose_boot(&fixture());
        let login = t.login_index().unwrap();
        let module = t.module_line("hello-mod").unwrap();
        assert!(module < login);
        assert_eq!(t.lines[module], "[boot] hello-mod: Hello from hello-mod");
        let cmd = t.lines.iter().position(|l| l == "helloworld: Hello World from libhelloworld");
        assert!(cmd.unwrap() > login);
        assert!(t.reached_login);
        assert!(run_boot_test(&fixture(), &BootTestSpec::default()).passed);
    }

    #[test]
    fn image_without_module_still_logs_in() {
        let img = fixture().without_package("hello-mod");
        let t = compose_boot(&img);
        assert!(t.module_line("hello-mod").is_none());
        assert!(t.reached_login);
        let r = run_boot_test(&img, &BootTestSpec::default());
        assert!(!r.passed);
        assert_eq!(r.failed().map(|a| a.name.as_str()).collect::<Vec<_>>(), ["module hello-mod"]);
    }

    #[test]
    fn missing_library_fails_command() {
        let img = fixture().without_package("libhelloworld");
        let t = compose_boot(&img);
        assert!(t.lines.contains(&"helloworld: error while loading shared library libhelloworld".into()));
        assert!(!t.test_outputs["helloworld"].passed);
        let r = run_boot_test(&img, &BootTestSpec::default());
        assert_eq!(r.failed().map(|a| a.name.as_str()).collect::<Vec<_>>(), ["command helloworld"]);
    }

    #[test]
    fn login_only_spec_passes_any_image() {
        let bare = ImageArtifact::compose("empty", vec![meta("libx", &[], false)]);
        assert!(run_boot_test(&bare, &BootTestSpec::login_only()).passed);
    }

    #[test]
    fn external_style_transcript() {
        let t = BootTranscript::from_lines(vec!["noise".into(), "qemuarm64 login: ".into()]);
        assert!(t.reached_login);
        assert!(evaluate(&t, &BootTestSpec::login_only()).passed);
        let none = BootTranscript::from_lines(vec!["Kernel panic".into()]);
        assert!(!evaluate(&none, &BootTestSpec::login_only()).passed);
    }

    #[test]
    fn spec_json_defaults() {
        let spec: BootTestSpec = serde_json::from_str("{}").unwrap();
        assert_eq!(spec, BootTestSpec::login_only());
    }
}
