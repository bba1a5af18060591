"""``python -m panosum``."""

from .cli import main

raise SystemExit(main())
