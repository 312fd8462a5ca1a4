from vortexpatch.cli import main

raise SystemExit(main())
