"""Sphinx configuration for the tubechannel documentation."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

project = "tubechannel"
author = "tubechannel developers"
copyright = f"2024, {author}"

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.napoleon",
    "sphinx.ext.doctest",
    "sphinx.ext.viewcode",
    "sphinx.ext.intersphinx",
    "sphinx_autodoc_typehints",
    "sphinx_copybutton",
]
exclude_patterns = ["_build", "README.md"]

intersphinx_mapping = {
    "python": ("https://docs.python.org/3/", None),
    "jax": ("https://jax.readthedocs.io/en/latest/", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
}

# Doctests run with double precision, as the package does on import
doctest_global_setup = "import jax\njax.config.update('jax_enable_x64', True)"

html_theme = "sphinx_book_theme"
html_title = "tubechannel"
html_theme_options = {"home_page_in_toc": True, "use_download_button": False}

autodoc_member_order = "bysource"
autodoc_inherit_docstrings = False
add_module_names = False
napoleon_attr_annotations = True
typehints_use_rtype = False
python_maximum_signature_line_length = 88

copybutton_prompt_text = r">>> |\.\.\. |\$ "
copybutton_prompt_is_regexp = True
