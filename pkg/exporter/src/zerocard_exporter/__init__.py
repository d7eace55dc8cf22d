"""Column embedding exporter.

Reads schema JSON files, serializes each column definition to its text
form, encodes the texts with a sentence-transformer, and writes the
vectors into the ZCEMB1 binary container consumed by the estimator
toolkit. This package is self-contained: it speaks to the estimator only
through the schema and embedding file formats.
"""

__version__ = "0.1.0"

from .export import ExportJob, export
from .serialize import serialize_column_text
from .writer import write_store
