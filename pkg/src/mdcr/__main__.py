from mdcr.cli import main

raise SystemExit(main())
