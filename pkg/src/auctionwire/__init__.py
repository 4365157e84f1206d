"""Compile direct-revelation auction menus into interactive randomized protocols and audit them."""

from .audit import ExplicitTree, equivalence_check, ic_audit, ic_audit_menu, materialize, revenue_audit, tree_best_response
from .engine import Protocol, Transcript, run
from .menu import Menu, MenuLine, Prior, Valuation, best_response, normalize_payments
from .stream import BundleMenu, compile_additive, compile_bundle, exact_expected_rounds

__version__ = "0.1.0"

__all__ = [
    "BundleMenu",
    "ExplicitTree",
    "Menu",
    "MenuLine",
    "Prior",
    "Protocol",
    "Transcript",
    "Valuation",
    "best_response",
    "compile_additive",
    "compile_bundle",
    "equivalence_check",
    "exact_expected_rounds",
    "ic_audit",
    "ic_audit_menu",
    "materialize",
    "normalize_payments",
    "revenue_audit",
    "run",
    "tree_best_response",
]
