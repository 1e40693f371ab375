//! Workloads shared by the criterion benchmarks.

use std::sync::Arc;

use plandec::harness::synthetic;
use plandec::model::TrieModel;
use plandec::reward::{Executor, MockExecutor, TestReward};
use plandec::{ProblemSpec, RewardSpec};

pub struct Workload {
    pub model: TrieModel,
    pub executor: Arc<dyn Executor>,
    pub problems: Vec<ProblemSpec>,
}

impl Workload {
    pub fn synthetic() -> Self {
        let suite = synthetic::suite();
        Self {
            model: suite.trie().expect("bundled trie is valid"),
            executor: Arc::new(MockExecutor::new(&suite.mock).expect("bundled mock table is valid")),
            problems: suite.problems,
        }
    }

    pub fn reward(&self, problem: &ProblemSpec) -> TestReward {
        TestReward::new(problem.public_tests.clone(), Arc::clone(&self.executor), RewardSpec::default())
            .expect("default reward spec is valid")
    }
}
