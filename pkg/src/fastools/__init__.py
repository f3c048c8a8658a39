"""fastools: tool-augmented face anti-spoofing toolkit.

Subpackages cover the non-training machinery of a tool-augmented FAS
pipeline: visual-tool image operators (:mod:`fastools.vistools`), the
multi-turn tool-call trajectory format (:mod:`fastools.trajectory`),
reward shaping and group advantages (:mod:`fastools.reward`), expert
guidance models (:mod:`fastools.expert`), a chat-completions client and
scripted mock (:mod:`fastools.mllm_client`), the annotation orchestrator
(:mod:`fastools.annotator`), FAS metrics (:mod:`fastools.metrics`), and a
CLI (:mod:`fastools.cli`).
"""

__version__ = "0.1.0"
