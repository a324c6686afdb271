"""Proxy-based deep metric learning and iterative self-training on a small numpy autodiff core."""

from .autodiff import Tensor, finite_diff_check, gradients
from .evaluation import EvalReport, evaluate_retrieval, kmeans, nmi, recall_at_k
from .losses import (ProxySet, nca_loss, normsoftmax_loss, proxy_loss, proxynca_loss,
                     proxynca_pp_loss)
from .retrieval import RetrievalConfig, ablate, train_retrieval
from .selftrain import SelfTrainConfig, fist_run, gist_search, rist_search, run_selftrain

__version__ = "0.1.0"
